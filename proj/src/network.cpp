#include "lgcnet/network.hpp"

#include <algorithm>
#include <cmath>

#include "lgcnet/error.hpp"

namespace lgc {
namespace {

void check_mask(const Tensor& mask, int rows, int cols, const char* what) {
  if (mask.rank() != 2 || mask.dim(0) != rows || mask.dim(1) != cols)
    throw ShapeError(std::string(what) + ": mask shape " + to_string(mask.shape()) + ", expected (" +
                     std::to_string(rows) + "," + std::to_string(cols) + ")");
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += mask.at(r, c);
    if (std::abs(s - 1.0) > 1e-9) throw ShapeError(std::string(what) + ": mask row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

EdgeOps make_edge(std::span<const Primitive> kinds, int c_in, int c_out, int stride, Rng& rng) {
  EdgeOps e;
  e.stride = stride;
  e.c_in = c_in;
  e.c_out = c_out;
  for (Primitive p : kinds) {
    e.kinds.push_back(p);
    e.weights.push_back(make_op_weights(p, c_in, c_out, stride, rng));
  }
  return e;
}

EdgeOps select_edge(const EdgeOps& full, Primitive choice) {
  EdgeOps e;
  e.stride = full.stride;
  e.c_in = full.c_in;
  e.c_out = full.c_out;
  if (choice == Primitive::kZero) return e;
  const auto it = std::find(full.kinds.begin(), full.kinds.end(), choice);
  if (it == full.kinds.end())
    throw ArtifactError("op '" + std::string(primitive_name(choice)) + "' is not a candidate on this edge");
  const auto i = static_cast<size_t>(it - full.kinds.begin());
  e.kinds.push_back(choice);
  e.weights.push_back(full.weights[i]);
  return e;
}

/// Output of one edge: a mixture under `mask`, or the single op otherwise.
/// Undefined when the edge carries no computation (zero op / pruned).
Tensor run_edge(EdgeOps& edge, int row, const Tensor& x, const Tensor* mask, bool training) {
  if (mask != nullptr) {
    std::vector<Tensor> terms(edge.kinds.size());
    for (size_t m = 0; m < edge.kinds.size(); ++m) {
      if (edge.kinds[m] == Primitive::kZero) continue;
      OpWeights* w = edge.weights[m].params.empty() ? nullptr : &edge.weights[m];
      terms[m] = apply_primitive(edge.kinds[m], x, w, edge.stride, edge.c_out, training);
    }
    return ops::mixture(*mask, row, terms);
  }
  if (edge.kinds.size() > 1) throw Error("discrete forward on an edge with several candidates; pass a mask");
  if (edge.kinds.empty() || edge.kinds[0] == Primitive::kZero) return {};
  OpWeights* w = edge.weights[0].params.empty() ? nullptr : &edge.weights[0];
  return apply_primitive(edge.kinds[0], x, w, edge.stride, edge.c_out, training);
}

void collect_edge(const EdgeOps& e, std::vector<Tensor>& out) {
  for (const auto& w : e.weights)
    for (const auto& p : w.params) out.push_back(p);
}

}  // namespace

// ---- ConvBlock ----------------------------------------------------------------

ConvBlock ConvBlock::make(int c_in, int c_out, int k, int stride, bool pre_relu, Rng& rng) {
  ConvBlock b;
  b.weight = kaiming_weight({c_out, c_in, k, k}, static_cast<int64_t>(c_in) * k * k, rng);
  b.gamma = Tensor::full({c_out}, 1.0, true);
  b.beta = Tensor::zeros({c_out}, true);
  b.bn.running_mean = Tensor::zeros({c_out});
  b.bn.running_var = Tensor::full({c_out}, 1.0);
  b.stride = stride;
  b.pad = k / 2;
  b.pre_relu = pre_relu;
  return b;
}

Tensor ConvBlock::forward(const Tensor& x, bool training) {
  Tensor y = pre_relu ? ops::relu(x) : x;
  y = ops::conv2d(y, weight, stride, pad, 1);
  return ops::batch_norm(y, gamma, beta, bn, training);
}

void ConvBlock::collect(std::vector<Tensor>& out) const {
  out.push_back(weight);
  out.push_back(gamma);
  out.push_back(beta);
}

// ---- Cell -------------------------------------------------------------------------

namespace {
int in0_channels(const Topology& t, int k) { return k >= 2 ? t.cell_out_channels(k - 2) : t.channels; }
int in1_channels(const Topology& t, int k) { return k >= 1 ? t.cell_out_channels(k - 1) : t.channels; }
int pre0_stride(const Topology& t, int k) { return (k >= 1 && t.is_reduction(k - 1)) ? 2 : 1; }
}  // namespace

Cell::Cell(const Topology& topology, int index, Rng& rng) {
  topology.validate_backbone();
  tmpl_.is_reduction = topology.is_reduction(index);
  channels_ = topology.cell_channels(index);
  pre0_ = ConvBlock::make(in0_channels(topology, index), channels_, 1, pre0_stride(topology, index), true, rng);
  pre1_ = ConvBlock::make(in1_channels(topology, index), channels_, 1, 1, true, rng);
  for (int e = 0; e < CellTemplate::p(); ++e)
    edges_.push_back(make_edge(backbone_candidates(), channels_, channels_, tmpl_.edge_stride(e), rng));
}

Cell::Cell(const Topology& topology, int index, const std::vector<Primitive>& choice, Rng& rng) {
  topology.validate_backbone();
  if (static_cast<int>(choice.size()) != CellTemplate::p()) throw ShapeError("cell choice must name one op per edge");
  tmpl_.is_reduction = topology.is_reduction(index);
  channels_ = topology.cell_channels(index);
  pre0_ = ConvBlock::make(in0_channels(topology, index), channels_, 1, pre0_stride(topology, index), true, rng);
  pre1_ = ConvBlock::make(in1_channels(topology, index), channels_, 1, 1, true, rng);
  for (int e = 0; e < CellTemplate::p(); ++e) {
    const Primitive p = choice[static_cast<size_t>(e)];
    if (p == Primitive::kZero) {
      edges_.push_back(make_edge({}, channels_, channels_, tmpl_.edge_stride(e), rng));
    } else {
      const Primitive one[1] = {p};
      edges_.push_back(make_edge(one, channels_, channels_, tmpl_.edge_stride(e), rng));
    }
  }
}

Cell Cell::select(const std::vector<Primitive>& choice) const {
  if (choice.size() != edges_.size()) throw ShapeError("cell choice must name one op per edge");
  Cell c;
  c.tmpl_ = tmpl_;
  c.channels_ = channels_;
  c.pre0_ = pre0_;
  c.pre1_ = pre1_;
  for (size_t e = 0; e < edges_.size(); ++e) c.edges_.push_back(select_edge(edges_[e], choice[e]));
  return c;
}

Tensor Cell::edge_forward(int e, const Tensor& x, const Tensor* mask, bool training) {
  return run_edge(edges_[static_cast<size_t>(e)], e, x, mask, training);
}

Tensor Cell::forward(const Tensor& s0, const Tensor& s1, const Tensor* mask, bool training) {
  if (mask != nullptr) check_mask(*mask, CellTemplate::p(), CellTemplate::q(), "cell_forward");
  std::array<Tensor, 4> nodes;
  nodes[0] = pre0_.forward(s0, training);
  nodes[1] = pre1_.forward(s1, training);
  if (nodes[0].shape() != nodes[1].shape())
    throw ShapeError("cell inputs disagree after preprocessing: " + to_string(nodes[0].shape()) + " vs " +
                     to_string(nodes[1].shape()));
  const int stride = tmpl_.is_reduction ? 2 : 1;
  const Shape node_shape{nodes[1].dim(0), channels_, nodes[1].dim(2) / stride, nodes[1].dim(3) / stride};
  const auto edges = CellTemplate::edges();
  for (int node = CellTemplate::kInputs; node < CellTemplate::kInputs + CellTemplate::kIntermediate; ++node) {
    std::vector<Tensor> incoming;
    for (int e = 0; e < CellTemplate::p(); ++e) {
      if (edges[static_cast<size_t>(e)].to != node) continue;
      Tensor y = edge_forward(e, nodes[static_cast<size_t>(edges[static_cast<size_t>(e)].from)], mask, training);
      if (y.defined()) incoming.push_back(y);
    }
    nodes[static_cast<size_t>(node)] = incoming.empty() ? Tensor::zeros(node_shape) : ops::add_n(incoming);
  }
  return ops::concat_channels({nodes[2], nodes[3]});
}

void Cell::collect(std::vector<Tensor>& out) const {
  pre0_.collect(out);
  pre1_.collect(out);
  for (const auto& e : edges_) collect_edge(e, out);
}

// ---- FusionCell -------------------------------------------------------------------

namespace {
std::array<int, 3> tap_order() { return {kR4, kR8, kR16}; }
}  // namespace

FusionCell::FusionCell(const Topology& topology, Rng& rng) {
  topology.validate();
  const int f = topology.fusion_channels;
  for (int i = 0; i < 3; ++i)
    reduce_[static_cast<size_t>(i)] =
        ConvBlock::make(topology.cell_out_channels(topology.fusion_taps[static_cast<size_t>(i)]), f, 1, 1, true, rng);
  for (int e = 0; e < FusionTemplate::kEdges; ++e)
    edges_.push_back(make_edge(FusionTemplate::candidates(e), FusionTemplate::edge_in_channels(e, f),
                               FusionTemplate::edge_out_channels(e, f), 1, rng));
}

FusionCell::FusionCell(const Topology& topology, const std::vector<Primitive>& choice, Rng& rng) {
  topology.validate();
  if (static_cast<int>(choice.size()) != FusionTemplate::kEdges)
    throw ShapeError("fusion choice must name one op per edge");
  const int f = topology.fusion_channels;
  for (int i = 0; i < 3; ++i)
    reduce_[static_cast<size_t>(i)] =
        ConvBlock::make(topology.cell_out_channels(topology.fusion_taps[static_cast<size_t>(i)]), f, 1, 1, true, rng);
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const Primitive one[1] = {choice[static_cast<size_t>(e)]};
    edges_.push_back(
        make_edge(one, FusionTemplate::edge_in_channels(e, f), FusionTemplate::edge_out_channels(e, f), 1, rng));
  }
}

FusionCell FusionCell::select(const std::vector<Primitive>& choice) const {
  if (choice.size() != edges_.size()) throw ShapeError("fusion choice must name one op per edge");
  FusionCell c;
  c.reduce_ = reduce_;
  for (size_t e = 0; e < edges_.size(); ++e) c.edges_.push_back(select_edge(edges_[e], choice[e]));
  return c;
}

Tensor FusionCell::forward(const std::array<Tensor, 3>& taps, const Tensor* mask, bool training) {
  if (mask != nullptr) check_mask(*mask, FusionTemplate::kEdges, FusionTemplate::kQ, "fusion_forward");
  for (const auto& t : taps)
    if (t.rank() != 4) throw ShapeError("fusion_forward: taps must be (N,C,H,W)");
  for (int i = 1; i < 3; ++i) {
    const auto& a = taps[0];
    const auto& b = taps[static_cast<size_t>(i)];
    const int64_t f = int64_t{1} << i;
    if (b.dim(0) != a.dim(0) || b.dim(2) * f != a.dim(2) || b.dim(3) * f != a.dim(3))
      throw ShapeError("fusion_forward: tap strides mismatch, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::array<Tensor, FusionTemplate::kNodes> nodes;
  const auto order = tap_order();
  for (int i = 0; i < 3; ++i)
    nodes[static_cast<size_t>(order[static_cast<size_t>(i)])] =
        reduce_[static_cast<size_t>(i)].forward(taps[static_cast<size_t>(i)], training);

  const auto edges = FusionTemplate::edges();
  for (int node = kM16; node <= kF4; ++node) {
    std::vector<Tensor> incoming;
    for (int e = 0; e < FusionTemplate::kEdges; ++e) {
      const auto& fe = edges[static_cast<size_t>(e)];
      if (fe.to != node) continue;
      incoming.push_back(run_edge(edges_[static_cast<size_t>(e)], e, nodes[static_cast<size_t>(fe.from)], mask, training));
    }
    nodes[static_cast<size_t>(node)] =
        FusionTemplate::node_concatenates(node) ? ops::concat_channels(incoming) : ops::add_n(incoming);
  }
  const int h = static_cast<int>(taps[0].dim(2)), w = static_cast<int>(taps[0].dim(3));
  return ops::add_n({nodes[kF4], ops::resize_bilinear(nodes[kF8], h, w), ops::resize_bilinear(nodes[kF16], h, w)});
}

void FusionCell::collect(std::vector<Tensor>& out) const {
  for (const auto& r : reduce_) r.collect(out);
  for (const auto& e : edges_) collect_edge(e, out);
}

// ---- Network ------------------------------------------------------------------------

Network::Network(const Topology& topology, Rng& rng) : topology_(topology) {
  topology_.validate();
  const int c0 = topology_.channels;
  stem_[0] = ConvBlock::make(3, c0, 3, 2, false, rng);
  stem_[1] = ConvBlock::make(c0, c0, 3, 2, true, rng);
  stem_[2] = ConvBlock::make(c0, c0, 3, 1, true, rng);
  for (int k = 0; k < topology_.cells; ++k) cells_.emplace_back(topology_, k, rng);
  fusion_ = FusionCell(topology_, rng);
  head_weight_ = kaiming_weight({topology_.num_classes, topology_.fusion_channels, 1, 1}, topology_.fusion_channels, rng);
  head_bias_ = Tensor::zeros({topology_.num_classes}, true);
}

Network::Network(const Genotype& g, Rng& rng) : topology_(g.topology) {
  validate_genotype(g);
  topology_.validate();
  const int c0 = topology_.channels;
  stem_[0] = ConvBlock::make(3, c0, 3, 2, false, rng);
  stem_[1] = ConvBlock::make(c0, c0, 3, 2, true, rng);
  stem_[2] = ConvBlock::make(c0, c0, 3, 1, true, rng);
  for (int k = 0; k < topology_.cells; ++k) cells_.emplace_back(topology_, k, g.cells[static_cast<size_t>(k)], rng);
  fusion_ = FusionCell(topology_, g.fusion, rng);
  head_weight_ = kaiming_weight({topology_.num_classes, topology_.fusion_channels, 1, 1}, topology_.fusion_channels, rng);
  head_bias_ = Tensor::zeros({topology_.num_classes}, true);
}

Network Network::select(const Genotype& g) const {
  validate_genotype(g);
  if (!(g.topology == topology_)) throw ArtifactError("genotype topology does not match the supernet");
  Network n(topology_);
  n.stem_ = stem_;
  for (int k = 0; k < topology_.cells; ++k)
    n.cells_.push_back(cells_[static_cast<size_t>(k)].select(g.cells[static_cast<size_t>(k)]));
  n.fusion_ = fusion_.select(g.fusion);
  n.head_weight_ = head_weight_;
  n.head_bias_ = head_bias_;
  return n;
}

std::array<Tensor, 2> Network::stem_forward(const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != 3) throw ShapeError("network input must be (N,3,H,W), got " + to_string(images.shape()));
  const int64_t need = topology_.cell_stride(topology_.cells - 1);
  if (images.dim(2) % need != 0 || images.dim(3) % need != 0)
    throw ShapeError("input extents " + to_string(images.shape()) + " must be divisible by " + std::to_string(need));
  Tensor a = stem_[0].forward(images, training);
  Tensor b = stem_[1].forward(a, training);
  Tensor c = stem_[2].forward(b, training);
  return {b, c};
}

Tensor Network::forward(const Tensor& images, const std::vector<Tensor>* cell_masks, const Tensor* fusion_mask,
                        bool training) {
  if ((cell_masks == nullptr) != (fusion_mask == nullptr))
    throw Error("pass masks for both the cells and the fusion cell, or for neither");
  if (cell_masks && static_cast<int>(cell_masks->size()) != topology_.cells)
    throw ShapeError("expected one mask per cell");
  auto [s0, s1] = stem_forward(images, training);
  std::array<Tensor, 3> taps;
  for (int k = 0; k < topology_.cells; ++k) {
    const Tensor* mask = cell_masks ? &(*cell_masks)[static_cast<size_t>(k)] : nullptr;
    Tensor out = cells_[static_cast<size_t>(k)].forward(s0, s1, mask, training);
    for (int i = 0; i < 3; ++i)
      if (topology_.fusion_taps[static_cast<size_t>(i)] == k) taps[static_cast<size_t>(i)] = out;
    s0 = s1;
    s1 = out;
  }
  Tensor fused = fusion_.forward(taps, fusion_mask, training);
  Tensor logits = ops::add_channel_bias(ops::conv2d(ops::relu(fused), head_weight_, 1, 0, 1), head_bias_);
  return ops::resize_bilinear(logits, static_cast<int>(images.dim(2)), static_cast<int>(images.dim(3)));
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (const auto& s : stem_) s.collect(out);
  for (const auto& c : cells_) c.collect(out);
  fusion_.collect(out);
  out.push_back(head_weight_);
  out.push_back(head_bias_);
  return out;
}

int64_t Network::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

}  // namespace lgc
