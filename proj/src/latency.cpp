#include "lgcnet/latency.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>
#include <tuple>

#include "json_io.hpp"
#include "lgcnet/error.hpp"
#include "lgcnet/network.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {
namespace {

using detail::json;

// Smallest entry a measured table may hold; a zero-width timing would make
// log(lat) and the positivity invariant fragile.
constexpr double kMinEntryUs = 1e-3;

struct EdgeShape {
  int c_in;
  int c_out;
  int h;
  int w;
  int stride;
};

EdgeShape cell_edge_shape(const Topology& t, const LutOptions& o, int k, int e) {
  const CellTemplate tmpl{t.is_reduction(k)};
  const int c = t.cell_channels(k);
  const int stride = tmpl.edge_stride(e);
  const int from = CellTemplate::edges()[static_cast<size_t>(e)].from;
  const int out_stride = t.cell_stride(k);
  const int in_stride = from < CellTemplate::kInputs ? out_stride / stride : out_stride;
  return {c, c, o.height / in_stride, o.width / in_stride, stride};
}

EdgeShape fusion_edge_shape(const Topology& t, const LutOptions& o, int e) {
  const auto& fe = FusionTemplate::edges()[static_cast<size_t>(e)];
  const int s = 4 * FusionTemplate::node_scale(fe.from);
  return {FusionTemplate::edge_in_channels(e, t.fusion_channels), FusionTemplate::edge_out_channels(e, t.fusion_channels),
          o.height / s, o.width / s, 1};
}

struct FixedLayer {
  int c_in;
  int c_out;
  int k;
  int h;  // input extents
  int w;
  int stride;
};

/// Stem, per-cell preprocessing, tap reductions and the classifier conv.
std::vector<FixedLayer> fixed_layers(const Topology& t, const LutOptions& o) {
  std::vector<FixedLayer> out;
  const int c0 = t.channels;
  out.push_back({3, c0, 3, o.height, o.width, 2});
  out.push_back({c0, c0, 3, o.height / 2, o.width / 2, 2});
  out.push_back({c0, c0, 3, o.height / 4, o.width / 4, 1});
  for (int k = 0; k < t.cells; ++k) {
    const int c = t.cell_channels(k);
    const int in_stride = t.cell_stride(k) / (t.is_reduction(k) ? 2 : 1);
    const int in0 = k >= 2 ? t.cell_out_channels(k - 2) : c0;
    const int in1 = k >= 1 ? t.cell_out_channels(k - 1) : c0;
    const int s0 = (k >= 1 && t.is_reduction(k - 1)) ? 2 : 1;
    out.push_back({in0, c, 1, o.height * s0 / in_stride, o.width * s0 / in_stride, s0});
    out.push_back({in1, c, 1, o.height / in_stride, o.width / in_stride, 1});
  }
  for (int tap : t.fusion_taps) {
    const int s = t.cell_stride(tap);
    out.push_back({t.cell_out_channels(tap), t.fusion_channels, 1, o.height / s, o.width / s, 1});
  }
  out.push_back({t.fusion_channels, t.num_classes, 1, o.height / 4, o.width / 4, 1});
  return out;
}

double analytic_cost(double macs, const LutOptions& o) { return o.overhead_us + o.us_per_mac * macs; }

double analytic_fixed(const Topology& t, const LutOptions& o) {
  double total = 0.0;
  for (const auto& l : fixed_layers(t, o)) {
    const double out_px = static_cast<double>(l.h / l.stride) * (l.w / l.stride);
    total += analytic_cost(static_cast<double>(l.k) * l.k * l.c_in * l.c_out * out_px, o);
  }
  // Resizing F8 and F16 to stride 4, then the logits to input size.
  const double px4 = static_cast<double>(o.height / 4) * (o.width / 4);
  total += 2.0 * analytic_cost(4.0 * t.fusion_channels * px4, o);
  total += analytic_cost(4.0 * t.num_classes * o.height * o.width, o);
  return total;
}

// ---- measured mode ------------------------------------------------------------

template <typename Fn>
double median_us(Fn&& fn, const LutOptions& o) {
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < o.warmup; ++i) fn();
  std::vector<double> runs;
  runs.reserve(static_cast<size_t>(o.runs));
  for (int i = 0; i < o.runs; ++i) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    runs.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  std::sort(runs.begin(), runs.end());
  const size_t n = runs.size();
  const double m = n % 2 == 1 ? runs[n / 2] : 0.5 * (runs[n / 2 - 1] + runs[n / 2]);
  return std::max(m, kMinEntryUs);
}

Tensor random_input(int c, int h, int w, Rng& rng) {
  Tensor x = Tensor::zeros({1, c, h, w});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

class OpTimer {
 public:
  explicit OpTimer(const LutOptions& o) : options_(o), rng_(0x1a7e) {}

  double time(Primitive p, const EdgeShape& s) {
    const auto key = std::make_tuple(static_cast<int>(p), s.c_in, s.c_out, s.h, s.w, s.stride);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    Tensor x = random_input(s.c_in, s.h, s.w, rng_);
    OpWeights w = make_op_weights(p, s.c_in, s.c_out, s.stride, rng_);
    OpWeights* wp = w.params.empty() ? nullptr : &w;
    const double us = median_us([&] { (void)apply_primitive(p, x, wp, s.stride, s.c_out, false); }, options_);
    cache_.emplace(key, us);
    return us;
  }

  double fixed(const Topology& t) {
    double total = 0.0;
    for (const auto& l : fixed_layers(t, options_)) {
      ConvBlock b = ConvBlock::make(l.c_in, l.c_out, l.k, l.stride, true, rng_);
      Tensor x = random_input(l.c_in, l.h, l.w, rng_);
      total += median_us([&] { (void)b.forward(x, false); }, options_);
    }
    Tensor f = random_input(t.fusion_channels, options_.height / 16, options_.width / 16, rng_);
    total += 2.0 * median_us([&] { (void)ops::resize_bilinear(f, options_.height / 4, options_.width / 4); }, options_);
    Tensor logits = random_input(t.num_classes, options_.height / 4, options_.width / 4, rng_);
    total += median_us([&] { (void)ops::resize_bilinear(logits, options_.height, options_.width); }, options_);
    return total;
  }

 private:
  LutOptions options_;
  Rng rng_;
  std::map<std::tuple<int, int, int, int, int, int>, double> cache_;
};

std::string read_first_match(const char* path, const std::string& prefix) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string v = line.substr(colon + 1);
        v.erase(0, v.find_first_not_of(" \t"));
        return v;
      }
    }
  return "unknown";
}

std::string host_fingerprint() {
  utsname u{};
  std::string os = "unknown";
  if (uname(&u) == 0) os = std::string(u.sysname) + " " + u.release + " " + u.machine + " (" + u.nodename + ")";
  return os + "; cpu: " + read_first_match("/proc/cpuinfo", "model name") +
         "; threads: " + std::to_string(std::thread::hardware_concurrency());
}

void check_shape(const Tensor& z, int64_t rows, int64_t cols, const char* what) {
  if (z.rank() != 2 || z.dim(0) != rows || z.dim(1) != cols)
    throw ShapeError(std::string(what) + ": mask shape " + to_string(z.shape()));
}

}  // namespace

std::string_view lut_mode_name(LutMode mode) { return mode == LutMode::kMeasured ? "measured" : "analytic"; }

LutMode lut_mode_from_name(std::string_view name) {
  if (name == "analytic") return LutMode::kAnalytic;
  if (name == "measured") return LutMode::kMeasured;
  throw ConfigError("unknown LUT mode '" + std::string(name) + "' (expected measured or analytic)");
}

void LatencyTable::validate() const {
  if (static_cast<int>(cells.size()) != topology.cells)
    throw LutError("table has " + std::to_string(cells.size()) + " cells, topology has " + std::to_string(topology.cells));
  auto check = [](double v, const std::string& where) {
    if (!(v > 0.0) || !std::isfinite(v)) throw LutError(where + ": entry must be positive, got " + std::to_string(v));
  };
  for (size_t k = 0; k < cells.size(); ++k) {
    if (static_cast<int>(cells[k].size()) != CellTemplate::p()) throw LutError("cell " + std::to_string(k) + ": wrong edge count");
    for (size_t e = 0; e < cells[k].size(); ++e) {
      if (static_cast<int>(cells[k][e].size()) != CellTemplate::q())
        throw LutError("cell " + std::to_string(k) + " edge " + std::to_string(e) + ": missing entries");
      for (double v : cells[k][e]) check(v, "cell " + std::to_string(k) + " edge " + std::to_string(e));
    }
  }
  if (static_cast<int>(fusion.size()) != FusionTemplate::kEdges) throw LutError("fusion: wrong edge count");
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    if (static_cast<int>(fusion[static_cast<size_t>(e)].size()) != FusionTemplate::candidate_count(e))
      throw LutError("fusion edge " + std::to_string(e) + ": missing entries");
    for (double v : fusion[static_cast<size_t>(e)]) check(v, "fusion edge " + std::to_string(e));
  }
  check(fixed_us, "fixed layers");
}

std::vector<double> LatencyTable::cell_weights(int k) const {
  if (k < 0 || k >= static_cast<int>(cells.size())) throw LutError("no entries for cell " + std::to_string(k));
  std::vector<double> w;
  for (const auto& row : cells[static_cast<size_t>(k)]) w.insert(w.end(), row.begin(), row.end());
  return w;
}

std::vector<double> LatencyTable::fusion_weights() const {
  std::vector<double> w(static_cast<size_t>(FusionTemplate::kEdges * FusionTemplate::kQ), 0.0);
  for (size_t e = 0; e < fusion.size(); ++e)
    std::copy(fusion[e].begin(), fusion[e].end(), w.begin() + static_cast<std::ptrdiff_t>(e * FusionTemplate::kQ));
  return w;
}

LatencyTable build_lut(const Topology& topology, LutMode mode, const LutOptions& options) {
  topology.validate();
  const int s = topology.cell_stride(topology.cells - 1);
  if (options.height <= 0 || options.width <= 0 || options.height % s != 0 || options.width % s != 0)
    throw ConfigError("LUT input size must be positive and divisible by " + std::to_string(s));
  LatencyTable lut;
  lut.topology = topology;
  lut.mode = mode;
  lut.options = options;

  if (mode == LutMode::kAnalytic) {
    if (!(options.overhead_us > 0.0) || !(options.us_per_mac > 0.0))
      throw ConfigError("analytic LUT needs positive overhead and per-MAC cost");
    lut.host = "analytic";
    auto cost = [&](Primitive p, const EdgeShape& sh) {
      return analytic_cost(primitive_macs(p, sh.c_in, sh.c_out, sh.h, sh.w, sh.stride), options);
    };
    for (int k = 0; k < topology.cells; ++k) {
      std::vector<std::vector<double>> edges;
      for (int e = 0; e < CellTemplate::p(); ++e) {
        const EdgeShape sh = cell_edge_shape(topology, options, k, e);
        std::vector<double> row;
        for (Primitive p : backbone_candidates()) row.push_back(cost(p, sh));
        edges.push_back(std::move(row));
      }
      lut.cells.push_back(std::move(edges));
    }
    for (int e = 0; e < FusionTemplate::kEdges; ++e) {
      const EdgeShape sh = fusion_edge_shape(topology, options, e);
      std::vector<double> row;
      for (Primitive p : FusionTemplate::candidates(e)) row.push_back(cost(p, sh));
      lut.fusion.push_back(std::move(row));
    }
    lut.fixed_us = analytic_fixed(topology, options);
  } else {
    using period = std::chrono::steady_clock::period;
    if (static_cast<double>(period::num) / static_cast<double>(period::den) > 1e-6)
      throw LutError("steady clock resolution is coarser than 1 us");
    if (options.warmup < 0 || options.runs <= 0) throw ConfigError("measured LUT needs warmup >= 0 and runs > 0");
    lut.host = host_fingerprint();
    NoGradGuard no_grad;
    OpTimer timer(options);
    for (int k = 0; k < topology.cells; ++k) {
      std::vector<std::vector<double>> edges;
      for (int e = 0; e < CellTemplate::p(); ++e) {
        const EdgeShape sh = cell_edge_shape(topology, options, k, e);
        std::vector<double> row;
        for (Primitive p : backbone_candidates()) row.push_back(timer.time(p, sh));
        edges.push_back(std::move(row));
      }
      lut.cells.push_back(std::move(edges));
    }
    for (int e = 0; e < FusionTemplate::kEdges; ++e) {
      const EdgeShape sh = fusion_edge_shape(topology, options, e);
      std::vector<double> row;
      for (Primitive p : FusionTemplate::candidates(e)) row.push_back(timer.time(p, sh));
      lut.fusion.push_back(std::move(row));
    }
    lut.fixed_us = timer.fixed(topology);
  }
  lut.validate();
  return lut;
}

std::string serialize_lut(const LatencyTable& lut) {
  lut.validate();
  const auto backbone = backbone_candidates();
  json cells = json::array();
  for (const auto& cell : lut.cells) {
    json edges = json::array();
    for (const auto& row : cell) {
      json entry = json::object();
      for (size_t m = 0; m < row.size(); ++m) entry[std::string(primitive_name(backbone[m]))] = row[m];
      edges.push_back(entry);
    }
    cells.push_back(edges);
  }
  json fusion = json::array();
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const auto cands = FusionTemplate::candidates(e);
    json entry = json::object();
    for (size_t m = 0; m < cands.size(); ++m) entry[std::string(primitive_name(cands[m]))] = lut.fusion[static_cast<size_t>(e)][m];
    fusion.push_back(entry);
  }
  std::vector<int> widths;
  for (int k = 0; k < lut.topology.cells; ++k) widths.push_back(lut.topology.cell_channels(k));
  json policy = lut.mode == LutMode::kAnalytic
                    ? json{{"overhead_us", lut.options.overhead_us}, {"us_per_mac", lut.options.us_per_mac}}
                    : json{{"runs", lut.options.runs}, {"statistic", "median"}, {"warmup", lut.options.warmup}};
  json meta{{"cell_channels", widths},
            {"fusion_channels", lut.topology.fusion_channels},
            {"host", lut.host},
            {"input", {{"batch", 1}, {"height", lut.options.height}, {"width", lut.options.width}}},
            {"mode", lut_mode_name(lut.mode)},
            {"policy", policy},
            {"units", "microseconds"}};
  json doc{{"cells", cells},
           {"fixed_us", lut.fixed_us},
           {"fusion", fusion},
           {"metadata", meta},
           {"topology", detail::topology_to_json(lut.topology)}};
  return doc.dump(2) + "\n";
}

LatencyTable parse_lut(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw LutError(std::string("LUT is not valid JSON: ") + e.what());
  }
  LatencyTable lut;
  try {
    lut.topology = detail::topology_from_json(doc.contains("topology") ? doc["topology"] : json());
  } catch (const ParseError& e) {
    throw LutError(e.what());
  }
  using detail::get_field;
  const json meta = doc.contains("metadata") ? doc["metadata"] : json();
  lut.mode = lut_mode_from_name(get_field<std::string, LutError>(meta, "mode", "metadata"));
  lut.host = get_field<std::string, LutError>(meta, "host", "metadata");
  const json input = meta.contains("input") ? meta["input"] : json();
  lut.options.height = get_field<int, LutError>(input, "height", "metadata.input");
  lut.options.width = get_field<int, LutError>(input, "width", "metadata.input");
  const json policy = meta.contains("policy") ? meta["policy"] : json();
  if (lut.mode == LutMode::kAnalytic) {
    lut.options.overhead_us = get_field<double, LutError>(policy, "overhead_us", "metadata.policy");
    lut.options.us_per_mac = get_field<double, LutError>(policy, "us_per_mac", "metadata.policy");
  } else {
    lut.options.runs = get_field<int, LutError>(policy, "runs", "metadata.policy");
    lut.options.warmup = get_field<int, LutError>(policy, "warmup", "metadata.policy");
  }
  lut.fixed_us = get_field<double, LutError>(doc, "fixed_us", "LUT");

  auto read_row = [](const json& entry, std::span<const Primitive> cands, const std::string& where) {
    if (!entry.is_object()) throw LutError(where + ": expected an object of op entries");
    std::vector<double> row;
    for (Primitive p : cands) row.push_back(get_field<double, LutError>(entry, std::string(primitive_name(p)).c_str(), where));
    if (entry.size() != cands.size()) throw LutError(where + ": unexpected op entries");
    return row;
  };
  const json cells = doc.contains("cells") ? doc["cells"] : json();
  if (!cells.is_array()) throw LutError("LUT: missing key 'cells'");
  for (size_t k = 0; k < cells.size(); ++k) {
    if (!cells[k].is_array()) throw LutError("cell " + std::to_string(k) + ": expected an edge list");
    std::vector<std::vector<double>> edges;
    for (size_t e = 0; e < cells[k].size(); ++e)
      edges.push_back(read_row(cells[k][e], backbone_candidates(), "cell " + std::to_string(k) + " edge " + std::to_string(e)));
    lut.cells.push_back(std::move(edges));
  }
  const json fusion = doc.contains("fusion") ? doc["fusion"] : json();
  if (!fusion.is_array()) throw LutError("LUT: missing key 'fusion'");
  for (size_t e = 0; e < fusion.size() && e < static_cast<size_t>(FusionTemplate::kEdges); ++e)
    lut.fusion.push_back(read_row(fusion[e], FusionTemplate::candidates(static_cast<int>(e)), "fusion edge " + std::to_string(e)));
  if (fusion.size() != static_cast<size_t>(FusionTemplate::kEdges)) throw LutError("fusion: wrong edge count");
  lut.validate();
  return lut;
}

Tensor expected_cell_latency(const Tensor& z, const LatencyTable& lut, int k) {
  check_shape(z, CellTemplate::p(), CellTemplate::q(), "expected_cell_latency");
  const std::vector<double> w = lut.cell_weights(k);
  return ops::dot_const(z, w);
}

Tensor expected_fusion_latency(const Tensor& z, const LatencyTable& lut) {
  check_shape(z, FusionTemplate::kEdges, FusionTemplate::kQ, "expected_fusion_latency");
  if (static_cast<int>(lut.fusion.size()) != FusionTemplate::kEdges) throw LutError("table has no fusion entries");
  const std::vector<double> w = lut.fusion_weights();
  return ops::dot_const(z, w);
}

Tensor expected_total_latency(const std::vector<Tensor>& cell_masks, const Tensor& fusion_mask, const LatencyTable& lut) {
  if (static_cast<int>(cell_masks.size()) != lut.topology.cells)
    throw LutError("expected " + std::to_string(lut.topology.cells) + " cell masks, got " + std::to_string(cell_masks.size()));
  std::vector<Tensor> terms;
  for (size_t k = 0; k < cell_masks.size(); ++k) terms.push_back(expected_cell_latency(cell_masks[k], lut, static_cast<int>(k)));
  terms.push_back(expected_fusion_latency(fusion_mask, lut));
  return ops::add_scalar(ops::add_n(terms), lut.fixed_us);
}

Tensor total_loss(const Tensor& ce, const Tensor& lat, double beta) {
  if (ce.numel() != 1 || lat.numel() != 1) throw ShapeError("total_loss: expected scalars");
  if (!(lat.item() > 0.0)) throw Error("total_loss: latency must be positive, got " + std::to_string(lat.item()));
  return ops::add(ce, ops::scale(ops::log(lat), beta));
}

double genotype_latency(const Genotype& g, const LatencyTable& lut) {
  validate_genotype(g);
  if (!(g.topology == lut.topology)) throw ArtifactError("genotype topology does not match the latency table");
  const auto backbone = backbone_candidates();
  double total = 0.0;
  for (int k = 0; k < g.topology.cells; ++k)
    for (int e = 0; e < CellTemplate::p(); ++e) {
      const Primitive p = g.cells[static_cast<size_t>(k)][static_cast<size_t>(e)];
      const auto m = static_cast<size_t>(std::find(backbone.begin(), backbone.end(), p) - backbone.begin());
      total += lut.cells[static_cast<size_t>(k)][static_cast<size_t>(e)][m];
    }
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const auto cands = FusionTemplate::candidates(e);
    const Primitive p = g.fusion[static_cast<size_t>(e)];
    const auto m = static_cast<size_t>(std::find(cands.begin(), cands.end(), p) - cands.begin());
    total += lut.fusion[static_cast<size_t>(e)][m];
  }
  return total + lut.fixed_us;
}

}  // namespace lgc
