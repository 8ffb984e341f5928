#include "lgcnet/searchspace.hpp"

#include <algorithm>
#include <array>
#include <json.hpp>
#include <set>

#include "json_io.hpp"
#include "lgcnet/error.hpp"

namespace lgc {
namespace {

using json = nlohmann::json;

constexpr std::array<CellEdge, 5> kCellEdges = {{{0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

constexpr std::array<FusionEdge, 13> kFusionEdges = {{
    {kR16, kM16, false},
    {kR8, kM8, false},
    {kR4, kM4, false},
    {kM16, kM8, true},
    {kM8, kM4, true},
    {kM16, kF16, false},
    {kM8, kF8, false},
    {kM4, kF4, false},
    {kR16, kF16, false},
    {kR8, kF8, false},
    {kR4, kF4, false},
    {kF16, kF8, true},
    {kF8, kF4, true},
}};

constexpr std::array<std::string_view, 9> kFusionNodeNames = {"R16", "R8", "R4", "M16", "M8",
                                                              "M4",  "F16", "F8", "F4"};

}  // namespace

// ---- Topology ---------------------------------------------------------------

void Topology::validate_backbone() const {
  if (cells < 1) throw ConfigError("topology.cells must be at least 1");
  if (channels < 1) throw ConfigError("topology.channels must be positive");
  if (num_classes < 2) throw ConfigError("topology.num_classes must be at least 2");
  std::set<int> seen;
  for (int r : reduction_indices) {
    if (r < 0 || r >= cells) throw ConfigError("reduction index " + std::to_string(r) + " outside [0, cells)");
    if (!seen.insert(r).second) throw ConfigError("duplicate reduction index " + std::to_string(r));
  }
  if (!std::is_sorted(reduction_indices.begin(), reduction_indices.end()))
    throw ConfigError("topology.reduction_indices must be ascending");
}

void Topology::validate() const {
  validate_backbone();
  if (fusion_channels < 1) throw ConfigError("topology.fusion_channels must be positive");
  const int expected[3] = {4, 8, 16};
  for (int i = 0; i < 3; ++i) {
    const int tap = fusion_taps[static_cast<size_t>(i)];
    if (tap < 0 || tap >= cells) throw ConfigError("fusion tap " + std::to_string(tap) + " outside [0, cells)");
    if (cell_stride(tap) != expected[i])
      throw ConfigError("fusion tap cell " + std::to_string(tap) + " has stride " + std::to_string(cell_stride(tap)) +
                        ", expected " + std::to_string(expected[i]) + " given reduction_indices");
  }
}

bool Topology::is_reduction(int cell) const {
  return std::find(reduction_indices.begin(), reduction_indices.end(), cell) != reduction_indices.end();
}

int Topology::reductions_through(int cell) const {
  return static_cast<int>(std::count_if(reduction_indices.begin(), reduction_indices.end(),
                                        [cell](int r) { return r <= cell; }));
}

int Topology::cell_channels(int cell) const { return channels << reductions_through(cell); }

// ---- CellTemplate -------------------------------------------------------------

std::span<const CellEdge> CellTemplate::edges() { return kCellEdges; }

int CellTemplate::edge_stride(int edge) const {
  return (is_reduction && kCellEdges.at(static_cast<size_t>(edge)).from < kInputs) ? 2 : 1;
}

std::string_view CellTemplate::node_name(int node) {
  static constexpr std::array<std::string_view, 4> names = {"i1", "i2", "x1", "x2"};
  return names.at(static_cast<size_t>(node));
}

// ---- FusionTemplate -------------------------------------------------------------

std::span<const FusionEdge> FusionTemplate::edges() { return kFusionEdges; }

int FusionTemplate::node_scale(int node) {
  switch (node) {
    case kR16:
    case kM16:
    case kF16: return 4;
    case kR8:
    case kM8:
    case kF8: return 2;
    default: return 1;
  }
}

bool FusionTemplate::node_concatenates(int node) { return node == kM16 || node == kM8 || node == kM4; }

std::string_view FusionTemplate::node_name(int node) { return kFusionNodeNames.at(static_cast<size_t>(node)); }

std::span<const Primitive> FusionTemplate::candidates(int edge) {
  return kFusionEdges.at(static_cast<size_t>(edge)).up ? upsample_candidates() : fusion_candidates();
}

int FusionTemplate::node_channels(int node, int width) {
  if (!node_concatenates(node)) return width;
  int c = 0;
  for (int e = 0; e < kEdges; ++e)
    if (kFusionEdges[static_cast<size_t>(e)].to == node) c += edge_out_channels(e, width);
  return c;
}

int FusionTemplate::edge_in_channels(int edge, int width) {
  return node_channels(kFusionEdges.at(static_cast<size_t>(edge)).from, width);
}

int FusionTemplate::edge_out_channels(int edge, int width) {
  const auto& e = kFusionEdges.at(static_cast<size_t>(edge));
  return e.up ? node_channels(e.from, width) : width;
}

// ---- Genotype -----------------------------------------------------------------

namespace {

bool contains(std::span<const Primitive> set, Primitive p) { return std::find(set.begin(), set.end(), p) != set.end(); }

}  // namespace

void validate_genotype(const Genotype& g) {
  if (static_cast<int>(g.cells.size()) != g.topology.cells)
    throw ParseError("genotype has " + std::to_string(g.cells.size()) + " cells, topology declares " +
                     std::to_string(g.topology.cells));
  for (size_t k = 0; k < g.cells.size(); ++k) {
    if (static_cast<int>(g.cells[k].size()) != CellTemplate::p())
      throw ParseError("cell " + std::to_string(k) + ": expected " + std::to_string(CellTemplate::p()) + " edges, got " +
                       std::to_string(g.cells[k].size()));
    for (size_t e = 0; e < g.cells[k].size(); ++e)
      if (!contains(backbone_candidates(), g.cells[k][e]))
        throw ParseError("cell " + std::to_string(k) + " edge " + std::to_string(e) + ": op '" +
                         std::string(primitive_name(g.cells[k][e])) + "' is not a backbone candidate");
  }
  if (static_cast<int>(g.fusion.size()) != FusionTemplate::kEdges)
    throw ParseError("fusion: expected " + std::to_string(FusionTemplate::kEdges) + " edges, got " +
                     std::to_string(g.fusion.size()));
  for (int e = 0; e < FusionTemplate::kEdges; ++e)
    if (!contains(FusionTemplate::candidates(e), g.fusion[static_cast<size_t>(e)]))
      throw ParseError("fusion edge " + std::to_string(e) + ": op '" +
                       std::string(primitive_name(g.fusion[static_cast<size_t>(e)])) + "' is not allowed on this edge");
}

std::string serialize_genotype(const Genotype& g) {
  validate_genotype(g);
  json cells = json::array();
  for (const auto& cell : g.cells) {
    json edges = json::array();
    for (int e = 0; e < CellTemplate::p(); ++e) {
      const auto& ce = CellTemplate::edges()[static_cast<size_t>(e)];
      const Primitive op = cell[static_cast<size_t>(e)];
      edges.push_back(json{{"from", CellTemplate::node_name(ce.from)},
                           {"id", e},
                           {"op", primitive_name(op)},
                           {"pruned", op == Primitive::kZero},
                           {"to", CellTemplate::node_name(ce.to)}});
    }
    cells.push_back(json{{"edges", edges}});
  }
  json fusion = json::array();
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const auto& fe = FusionTemplate::edges()[static_cast<size_t>(e)];
    fusion.push_back(json{{"from", FusionTemplate::node_name(fe.from)},
                          {"id", e},
                          {"op", primitive_name(g.fusion[static_cast<size_t>(e)])},
                          {"to", FusionTemplate::node_name(fe.to)},
                          {"up", fe.up}});
  }
  json doc{{"cells", cells}, {"fusion", fusion}, {"topology", detail::topology_to_json(g.topology)}, {"version", Genotype::kVersion}};
  return doc.dump(2) + "\n";
}

Genotype parse_genotype(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("genotype is not valid JSON: ") + e.what());
  }
  const int version = detail::get_field<int>(doc, "version", "genotype");
  if (version != Genotype::kVersion)
    throw ParseError("genotype version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(Genotype::kVersion) + ")");
  Genotype g;
  g.topology = detail::topology_from_json(doc.contains("topology") ? doc["topology"] : json());

  auto parse_edge = [](const json& je, int expected_id, const std::string& where, bool cell) {
    const int id = detail::get_field<int>(je, "id", where);
    if (id != expected_id) throw ParseError(where + ": missing edge " + std::to_string(expected_id));
    const std::string name = detail::get_field<std::string>(je, "op", where);
    const auto op = primitive_from_name(name);
    if (!op) throw ParseError(where + ": unknown op '" + name + "'");
    if (cell && detail::get_field<bool>(je, "pruned", where) != (*op == Primitive::kZero))
      throw ParseError(where + ": 'pruned' flag disagrees with op '" + name + "'");
    return *op;
  };

  const json& cells = doc.contains("cells") ? doc["cells"] : json();
  if (!cells.is_array()) throw ParseError("genotype: missing key 'cells'");
  for (size_t k = 0; k < cells.size(); ++k) {
    const std::string cw = "cell " + std::to_string(k);
    const json& edges = cells[k].contains("edges") ? cells[k]["edges"] : json();
    if (!edges.is_array()) throw ParseError(cw + ": missing key 'edges'");
    std::vector<Primitive> ops;
    for (int e = 0; e < CellTemplate::p(); ++e) {
      const std::string where = cw + " edge " + std::to_string(e);
      if (e >= static_cast<int>(edges.size())) throw ParseError(where + ": missing edge");
      ops.push_back(parse_edge(edges[static_cast<size_t>(e)], e, where, true));
    }
    if (edges.size() > static_cast<size_t>(CellTemplate::p())) throw ParseError(cw + ": too many edges");
    g.cells.push_back(std::move(ops));
  }
  const json& fusion = doc.contains("fusion") ? doc["fusion"] : json();
  if (!fusion.is_array()) throw ParseError("genotype: missing key 'fusion'");
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const std::string where = "fusion edge " + std::to_string(e);
    if (e >= static_cast<int>(fusion.size())) throw ParseError(where + ": missing edge");
    g.fusion.push_back(parse_edge(fusion[static_cast<size_t>(e)], e, where, false));
  }
  if (fusion.size() > static_cast<size_t>(FusionTemplate::kEdges)) throw ParseError("fusion: too many edges");
  validate_genotype(g);
  return g;
}

int64_t fixed_param_count(const Topology& t) {
  const int64_t c0 = t.channels;
  int64_t n = (3 * c0 * 9 + 2 * c0) + 2 * (c0 * c0 * 9 + 2 * c0);
  for (int k = 0; k < t.cells; ++k) {
    const int64_t ck = t.cell_channels(k);
    const int64_t in0 = k >= 2 ? t.cell_out_channels(k - 2) : c0;
    const int64_t in1 = k >= 1 ? t.cell_out_channels(k - 1) : c0;
    n += in0 * ck + 2 * ck + in1 * ck + 2 * ck;
  }
  const int64_t f = t.fusion_channels;
  for (int tap : t.fusion_taps) n += t.cell_out_channels(tap) * f + 2 * f;
  n += f * t.num_classes + t.num_classes;
  return n;
}

int64_t count_params(const Genotype& g) {
  validate_genotype(g);
  const Topology& t = g.topology;
  int64_t n = fixed_param_count(t);
  for (int k = 0; k < t.cells; ++k) {
    const CellTemplate tmpl{t.is_reduction(k)};
    const int c = t.cell_channels(k);
    for (int e = 0; e < CellTemplate::p(); ++e)
      n += primitive_param_count(g.cells[static_cast<size_t>(k)][static_cast<size_t>(e)], c, c, tmpl.edge_stride(e));
  }
  for (int e = 0; e < FusionTemplate::kEdges; ++e)
    n += primitive_param_count(g.fusion[static_cast<size_t>(e)], FusionTemplate::edge_in_channels(e, t.fusion_channels),
                               FusionTemplate::edge_out_channels(e, t.fusion_channels), 1);
  return n;
}


namespace detail {

json topology_to_json(const Topology& t) {
  return json{{"cells", t.cells},
              {"channels", t.channels},
              {"fusion_channels", t.fusion_channels},
              {"fusion_taps", t.fusion_taps},
              {"num_classes", t.num_classes},
              {"reduction_indices", t.reduction_indices}};
}

Topology topology_from_json(const json& j) {
  Topology t;
  t.cells = get_field<int>(j, "cells", "topology");
  t.channels = get_field<int>(j, "channels", "topology");
  t.fusion_channels = get_field<int>(j, "fusion_channels", "topology");
  t.fusion_taps = get_field<std::array<int, 3>>(j, "fusion_taps", "topology");
  t.num_classes = get_field<int>(j, "num_classes", "topology");
  t.reduction_indices = get_field<std::vector<int>>(j, "reduction_indices", "topology");
  return t;
}

}  // namespace detail

}  // namespace lgc
