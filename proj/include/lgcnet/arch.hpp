#pragma once

#include <span>
#include <vector>

#include "lgcnet/ggm.hpp"
#include "lgcnet/searchspace.hpp"

namespace lgc {

enum class CellSharing {
  kIndependent,  // one matrix per cell
  kShared,       // one normal and one reduction matrix reused by every cell
};

/// Search state over operations, stored as logits θ = log α so that α stays
/// strictly positive under any update.
///
/// Fusion rows of up edges only have two candidates; their trailing columns
/// are padding and are excluded by `fusion_widths()`.
class ArchParams {
 public:
  /// All logits zero, i.e. α uniform on every row.
  ArchParams(const Topology& topology, CellSharing sharing);

  CellSharing sharing() const { return sharing_; }
  const Topology& topology() const { return topology_; }

  /// Distinct backbone matrices: K when independent, 2 when shared.
  int matrix_count() const { return static_cast<int>(cells_.size()); }
  /// Logit matrix used by cell k (p x q).
  const Tensor& cell_logits(int k) const;
  Tensor& cell_logits(int k);
  /// Logits per cell in cell order (shared matrices repeat).
  std::vector<Tensor> per_cell_logits() const;
  const Tensor& fusion_logits() const { return fusion_; }
  Tensor& fusion_logits() { return fusion_; }

  /// α = exp(θ) for cell k.
  Tensor cell_alpha(int k) const;

  static std::span<const int> fusion_widths();

  std::vector<Tensor> parameters() const;

 private:
  int matrix_index(int k) const;

  Topology topology_;
  CellSharing sharing_;
  std::vector<Tensor> cells_;
  Tensor fusion_;
};

/// Per-row argmax; ties resolve to the lowest column. `widths` limits the
/// columns considered per row.
std::vector<int> row_argmax(const Tensor& m, std::span<const int> widths = {});

/// Decodes the genotype from the GGM-updated parameters. Every edge takes the
/// argmax op; a cell whose edges all decode to zero keeps a skip on the edge
/// with the largest zero weight so it stays connected.
Genotype decode(const ArchParams& arch, const GgmWeights& ggm);

}  // namespace lgc
