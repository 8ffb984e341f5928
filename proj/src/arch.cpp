#include "lgcnet/arch.hpp"

#include <array>

#include "lgcnet/error.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {
namespace {

std::array<int, FusionTemplate::kEdges> make_fusion_widths() {
  std::array<int, FusionTemplate::kEdges> w{};
  for (int e = 0; e < FusionTemplate::kEdges; ++e) w[static_cast<size_t>(e)] = FusionTemplate::candidate_count(e);
  return w;
}

const std::array<int, FusionTemplate::kEdges> kFusionWidths = make_fusion_widths();

}  // namespace

ArchParams::ArchParams(const Topology& topology, CellSharing sharing) : topology_(topology), sharing_(sharing) {
  topology_.validate();
  const int count = sharing == CellSharing::kShared ? 2 : topology_.cells;
  for (int i = 0; i < count; ++i) cells_.push_back(Tensor::zeros({CellTemplate::p(), CellTemplate::q()}, true));
  fusion_ = Tensor::zeros({FusionTemplate::kEdges, FusionTemplate::kQ}, true);
}

int ArchParams::matrix_index(int k) const {
  if (k < 0 || k >= topology_.cells) throw ShapeError("cell index " + std::to_string(k) + " out of range");
  if (sharing_ == CellSharing::kShared) return topology_.is_reduction(k) ? 1 : 0;
  return k;
}

const Tensor& ArchParams::cell_logits(int k) const { return cells_[static_cast<size_t>(matrix_index(k))]; }
Tensor& ArchParams::cell_logits(int k) { return cells_[static_cast<size_t>(matrix_index(k))]; }

std::vector<Tensor> ArchParams::per_cell_logits() const {
  std::vector<Tensor> out;
  for (int k = 0; k < topology_.cells; ++k) out.push_back(cell_logits(k));
  return out;
}

Tensor ArchParams::cell_alpha(int k) const { return ops::exp(cell_logits(k)); }

std::span<const int> ArchParams::fusion_widths() { return kFusionWidths; }

std::vector<Tensor> ArchParams::parameters() const {
  std::vector<Tensor> out = cells_;
  out.push_back(fusion_);
  return out;
}

std::vector<int> row_argmax(const Tensor& m, std::span<const int> widths) {
  if (m.rank() != 2) throw ShapeError("row_argmax: expected a matrix");
  const int64_t rows = m.dim(0), cols = m.dim(1);
  if (!widths.empty() && static_cast<int64_t>(widths.size()) != rows) throw ShapeError("row_argmax: widths size");
  std::vector<int> out;
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t w = widths.empty() ? cols : widths[static_cast<size_t>(r)];
    int best = 0;
    for (int64_t c = 1; c < w; ++c)
      if (m.at(r, c) > m.at(r, best)) best = static_cast<int>(c);
    out.push_back(best);
  }
  return out;
}

Genotype decode(const ArchParams& arch, const GgmWeights& ggm) {
  NoGradGuard no_grad;
  const Topology& t = arch.topology();
  const std::vector<Tensor> updated = ggm_chain(arch.per_cell_logits(), ggm);
  const auto backbone = backbone_candidates();
  int zero_col = -1, skip_col = -1;
  for (size_t m = 0; m < backbone.size(); ++m) {
    if (backbone[m] == Primitive::kZero) zero_col = static_cast<int>(m);
    if (backbone[m] == Primitive::kSkip) skip_col = static_cast<int>(m);
  }

  Genotype g;
  g.topology = t;
  for (int k = 0; k < t.cells; ++k) {
    const Tensor& a = updated[static_cast<size_t>(k)];
    const std::vector<int> best = row_argmax(a);
    std::vector<Primitive> ops;
    bool all_zero = true;
    for (int m : best) {
      ops.push_back(backbone[static_cast<size_t>(m)]);
      all_zero = all_zero && m == zero_col;
    }
    if (all_zero) {
      int keep = 0;
      for (int e = 1; e < CellTemplate::p(); ++e)
        if (a.at(e, zero_col) > a.at(keep, zero_col)) keep = e;
      ops[static_cast<size_t>(keep)] = backbone[static_cast<size_t>(skip_col)];
    }
    g.cells.push_back(std::move(ops));
  }
  const std::vector<int> fbest = row_argmax(arch.fusion_logits(), ArchParams::fusion_widths());
  for (int e = 0; e < FusionTemplate::kEdges; ++e)
    g.fusion.push_back(FusionTemplate::candidates(e)[static_cast<size_t>(fbest[static_cast<size_t>(e)])]);
  return g;
}

}  // namespace lgc
