#pragma once

#include <array>
#include <vector>

#include "lgcnet/primitives.hpp"
#include "lgcnet/searchspace.hpp"

namespace lgc {

/// Candidate ops held by one edge. A supernet edge holds every candidate; a
/// discrete edge holds the chosen op, or nothing when the choice is zero.
struct EdgeOps {
  std::vector<Primitive> kinds;
  std::vector<OpWeights> weights;
  int stride = 1;
  int c_in = 0;
  int c_out = 0;
};

/// Fixed ReLU -> conv -> BN layer (stem, preprocessing, tap reduction).
struct ConvBlock {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  ops::BatchNormState bn;
  int stride = 1;
  int pad = 0;
  bool pre_relu = true;

  static ConvBlock make(int c_in, int c_out, int k, int stride, bool pre_relu, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(std::vector<Tensor>& out) const;
};

class Cell {
 public:
  Cell() = default;
  /// Supernet cell with every backbone candidate on every edge.
  Cell(const Topology& topology, int index, Rng& rng);
  /// Discrete cell with freshly initialised weights for the chosen ops only.
  Cell(const Topology& topology, int index, const std::vector<Primitive>& choice, Rng& rng);

  /// Discrete view sharing this cell's weights (including BN statistics).
  Cell select(const std::vector<Primitive>& choice) const;

  /// With a mask (p x q, rows summing to 1) each edge is the mask-weighted sum
  /// of its candidates; without one every edge must hold at most one op.
  /// Output is the channel concatenation of the two intermediate nodes.
  Tensor forward(const Tensor& s0, const Tensor& s1, const Tensor* mask, bool training);

  void collect(std::vector<Tensor>& out) const;
  const CellTemplate& cell_template() const { return tmpl_; }
  int channels() const { return channels_; }

 private:
  Tensor edge_forward(int e, const Tensor& x, const Tensor* mask, bool training);

  CellTemplate tmpl_;
  int channels_ = 0;
  ConvBlock pre0_;
  ConvBlock pre1_;
  std::vector<EdgeOps> edges_;
};

class FusionCell {
 public:
  FusionCell() = default;
  FusionCell(const Topology& topology, Rng& rng);
  FusionCell(const Topology& topology, const std::vector<Primitive>& choice, Rng& rng);
  FusionCell select(const std::vector<Primitive>& choice) const;

  /// taps: outputs of the three tap cells at strides 4, 8, 16. Returns the
  /// fused `fusion_channels` map at stride 4.
  Tensor forward(const std::array<Tensor, 3>& taps, const Tensor* mask, bool training);
  void collect(std::vector<Tensor>& out) const;

 private:
  std::array<ConvBlock, 3> reduce_;
  std::vector<EdgeOps> edges_;
};

/// Stem + cells + fusion cell + classifier. Produces logits at input size.
class Network {
 public:
  /// Supernet with all candidates.
  Network(const Topology& topology, Rng& rng);
  /// Discrete network for `g`, freshly initialised.
  Network(const Genotype& g, Rng& rng);

  /// Discrete network sharing this supernet's weights.
  Network select(const Genotype& g) const;

  /// cell_masks: one p x q mask per cell; fusion_mask: E x q_f. Pass nullptr
  /// for both on a discrete network.
  Tensor forward(const Tensor& images, const std::vector<Tensor>* cell_masks, const Tensor* fusion_mask,
                 bool training);

  /// Stem outputs at stride 4 (the two inputs of cell 0).
  std::array<Tensor, 2> stem_forward(const Tensor& images, bool training);

  Cell& cell(int k) { return cells_.at(static_cast<size_t>(k)); }
  FusionCell& fusion() { return fusion_; }
  const Topology& topology() const { return topology_; }

  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;

 private:
  explicit Network(const Topology& topology) : topology_(topology) {}

  Topology topology_;
  std::array<ConvBlock, 3> stem_;
  std::vector<Cell> cells_;
  FusionCell fusion_;
  Tensor head_weight_;
  Tensor head_bias_;
};

}  // namespace lgc
