#include "lgcnet/dot.hpp"

#include <sstream>

namespace lgc {
namespace {

std::string edge_attrs(Primitive p) {
  std::string label(primitive_name(p));
  std::string attrs;
  if (const int d = primitive_dilation(p); d > 1) {
    label += " (d=" + std::to_string(d) + ")";
    attrs += ", color=\"green\"";
  }
  if (is_lightweight(p)) attrs += ", style=\"dashed\"";
  return "[label=\"" + label + "\"" + attrs + "]";
}

}  // namespace

std::string genotype_dot(const Genotype& g) {
  validate_genotype(g);
  std::ostringstream out;
  out << "digraph genotype {\n  rankdir=LR;\n  node [shape=box];\n";
  for (size_t k = 0; k < g.cells.size(); ++k) {
    const std::string id = "c" + std::to_string(k) + "_";
    const bool reduction = g.topology.is_reduction(static_cast<int>(k));
    out << "  subgraph cluster_cell" << k << " {\n";
    out << "    label=\"cell " << k << (reduction ? " (reduction)" : "") << "\";\n";
    for (int n = 0; n < CellTemplate::kInputs + CellTemplate::kIntermediate; ++n)
      out << "    " << id << CellTemplate::node_name(n) << " [label=\"" << CellTemplate::node_name(n) << "\"];\n";
    out << "    " << id << "out [label=\"concat\"];\n";
    for (int e = 0; e < CellTemplate::p(); ++e) {
      const auto& ce = CellTemplate::edges()[static_cast<size_t>(e)];
      out << "    " << id << CellTemplate::node_name(ce.from) << " -> " << id << CellTemplate::node_name(ce.to) << " "
          << edge_attrs(g.cells[k][static_cast<size_t>(e)]) << ";\n";
    }
    for (int n = CellTemplate::kInputs; n < CellTemplate::kInputs + CellTemplate::kIntermediate; ++n)
      out << "    " << id << CellTemplate::node_name(n) << " -> " << id << "out;\n";
    out << "  }\n";
  }
  out << "  subgraph cluster_fusion {\n    label=\"fusion\";\n";
  for (int n = 0; n < FusionTemplate::kNodes; ++n)
    out << "    f_" << FusionTemplate::node_name(n) << " [label=\"" << FusionTemplate::node_name(n) << "\"];\n";
  out << "    f_out [label=\"sum\"];\n";
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const auto& fe = FusionTemplate::edges()[static_cast<size_t>(e)];
    out << "    f_" << FusionTemplate::node_name(fe.from) << " -> f_" << FusionTemplate::node_name(fe.to) << " "
        << edge_attrs(g.fusion[static_cast<size_t>(e)]) << ";\n";
  }
  for (int n : {kF16, kF8, kF4}) out << "    f_" << FusionTemplate::node_name(n) << " -> f_out;\n";
  out << "  }\n}\n";
  return out.str();
}

}  // namespace lgc
