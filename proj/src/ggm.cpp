#include "lgcnet/ggm.hpp"

#include <cmath>

#include "lgcnet/error.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {
namespace {

void require_matrix_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": dimension mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

Tensor uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return ops::add_row_bias(ops::matmul(x, w), b); }

}  // namespace

std::string_view ggm_mode_name(GgmMode mode) {
  switch (mode) {
    case GgmMode::kEdgeSimilarity: return "edge_similarity";
    case GgmMode::kOperationIdentity: return "operation_identity";
    case GgmMode::kFc: return "fc";
    case GgmMode::kNone: return "none";
  }
  return "none";
}

GgmMode ggm_mode_from_name(std::string_view name) {
  for (GgmMode m : {GgmMode::kEdgeSimilarity, GgmMode::kOperationIdentity, GgmMode::kFc, GgmMode::kNone})
    if (ggm_mode_name(m) == name) return m;
  throw ConfigError("unknown ggm mode '" + std::string(name) + "'");
}

std::vector<Tensor> GgmPairWeights::parameters() const {
  std::vector<Tensor> out;
  for (const Tensor* t : {&w1, &w2, &embed_w, &embed_b, &out_w, &out_b, &gcn})
    if (t->defined()) out.push_back(*t);
  return out;
}

GgmWeights GgmWeights::make(const GgmConfig& config, int cells, int p, int q, Rng& rng) {
  if (config.dim <= 0) throw ConfigError("ggm.dim must be positive");
  if (!std::isfinite(config.gamma)) throw ConfigError("ggm.gamma must be finite");
  GgmWeights g;
  g.config = config;
  if (config.mode == GgmMode::kNone) return g;
  (void)p;
  const int f = config.mode == GgmMode::kOperationIdentity ? 1 : q;
  const int d = config.dim;
  for (int k = 1; k < cells; ++k) {
    GgmPairWeights w;
    if (config.mode == GgmMode::kEdgeSimilarity) {
      w.w1 = uniform_init({q, q}, q, rng);
      w.w2 = uniform_init({q, q}, q, rng);
    }
    w.embed_w = uniform_init({f, d}, f, rng);
    w.embed_b = uniform_init({d}, f, rng);
    w.out_w = Tensor::zeros({d, f}, true);
    w.out_b = Tensor::zeros({f}, true);
    if (config.mode != GgmMode::kFc) w.gcn = uniform_init({d, d}, d, rng);
    g.pairs.push_back(std::move(w));
  }
  return g;
}

std::vector<Tensor> GgmWeights::parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : pairs)
    for (auto& t : p.parameters()) out.push_back(t);
  return out;
}

Tensor adjacency(const Tensor& current, const Tensor& previous, const Tensor& w1, const Tensor& w2) {
  require_matrix_pair(current, previous, "adjacency");
  const int64_t q = current.dim(1);
  if (w1.rank() != 2 || w1.dim(0) != q || w1.dim(1) != q || w2.shape() != w1.shape())
    throw ShapeError("adjacency: transforms must be " + std::to_string(q) + "x" + std::to_string(q));
  return ops::softmax_rows(ops::matmul(ops::matmul(current, w1), ops::transpose(ops::matmul(previous, w2))));
}

Tensor gcn_propagate(const Tensor& x, const Tensor& adj, const Tensor& weight) {
  if (x.rank() != 2 || adj.rank() != 2 || adj.dim(0) != x.dim(0) || adj.dim(1) != x.dim(0) || weight.rank() != 2 ||
      weight.dim(0) != x.dim(1) || weight.dim(1) != x.dim(1))
    throw ShapeError("gcn_propagate: X " + to_string(x.shape()) + ", A " + to_string(adj.shape()) + ", W " +
                     to_string(weight.shape()));
  return ops::add(ops::matmul(ops::matmul(adj, x), weight), x);
}

Tensor operation_identity_adjacency(const Tensor& current, const Tensor& previous) {
  require_matrix_pair(current, previous, "operation_identity_adjacency");
  const int64_t n = current.numel();
  return ops::softmax_rows(ops::matmul(ops::reshape(current, {n, 1}), ops::reshape(previous, {1, n})));
}

Tensor ggm_update(const Tensor& current, const Tensor& previous, const GgmPairWeights& w, const GgmConfig& config) {
  require_matrix_pair(current, previous, "ggm_update");
  switch (config.mode) {
    case GgmMode::kNone: return current;
    case GgmMode::kFc: {
      Tensor h = affine(previous, w.embed_w, w.embed_b);
      return ops::add(current, ops::scale(affine(h, w.out_w, w.out_b), config.gamma));
    }
    case GgmMode::kEdgeSimilarity: {
      Tensor adj = adjacency(current, previous, w.w1, w.w2);
      Tensor h = gcn_propagate(affine(previous, w.embed_w, w.embed_b), adj, w.gcn);
      return ops::add(current, ops::scale(affine(h, w.out_w, w.out_b), config.gamma));
    }
    case GgmMode::kOperationIdentity: {
      const int64_t n = current.numel();
      Tensor adj = operation_identity_adjacency(current, previous);
      Tensor h = gcn_propagate(affine(ops::reshape(previous, {n, 1}), w.embed_w, w.embed_b), adj, w.gcn);
      Tensor delta = ops::reshape(affine(h, w.out_w, w.out_b), current.shape());
      return ops::add(current, ops::scale(delta, config.gamma));
    }
  }
  return current;
}

std::vector<Tensor> ggm_chain(const std::vector<Tensor>& cells, const GgmWeights& weights) {
  std::vector<Tensor> out;
  out.reserve(cells.size());
  for (size_t k = 0; k < cells.size(); ++k) {
    if (k == 0 || weights.config.mode == GgmMode::kNone) {
      out.push_back(cells[k]);
      continue;
    }
    if (weights.pairs.size() < k) throw ShapeError("ggm_chain: no weights for cell " + std::to_string(k));
    const Tensor& prev = weights.config.cascade ? out[k - 1] : cells[k - 1];
    out.push_back(ggm_update(cells[k], prev, weights.pairs[k - 1], weights.config));
  }
  return out;
}

}  // namespace lgc
