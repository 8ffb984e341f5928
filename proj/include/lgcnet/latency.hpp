#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lgcnet/searchspace.hpp"

namespace lgc {

enum class LutMode { kAnalytic, kMeasured };

std::string_view lut_mode_name(LutMode mode);
/// Throws ConfigError on an unknown name.
LutMode lut_mode_from_name(std::string_view name);

struct LutOptions {
  int height = 64;  // input image size the table is built for
  int width = 128;
  // analytic: cost = overhead_us + us_per_mac * MACs
  double overhead_us = 2.0;
  double us_per_mac = 1e-3;
  // measured: median of `runs` timed forwards after `warmup` untimed ones
  int warmup = 10;
  int runs = 50;
};

/// Per-(cell, edge, op) and per-(fusion edge, op) cost in microseconds, plus
/// one constant covering every fixed layer (stem, preprocessing, tap
/// reductions, classifier).
struct LatencyTable {
  Topology topology;
  LutMode mode = LutMode::kAnalytic;
  LutOptions options;
  std::string host;
  std::vector<std::vector<std::vector<double>>> cells;  // [K][p][q]
  std::vector<std::vector<double>> fusion;              // [E][candidates of edge]
  double fixed_us = 0.0;

  /// Throws LutError unless every entry exists and is positive.
  void validate() const;
  /// Row-major p x q weights of cell k.
  std::vector<double> cell_weights(int k) const;
  /// Row-major E x q_f weights; padding columns are zero.
  std::vector<double> fusion_weights() const;
};

/// Throws LutError when the clock cannot resolve 1 µs in measured mode.
LatencyTable build_lut(const Topology& topology, LutMode mode, const LutOptions& options = {});

/// Canonical JSON: sorted keys, two-space indent, trailing newline.
std::string serialize_lut(const LatencyTable& lut);
/// Throws LutError on malformed or incomplete tables.
LatencyTable parse_lut(std::string_view text);

/// Σ_e Σ_m z[e, m] · lat_k[e, m]. z is the p x q mask of cell k.
Tensor expected_cell_latency(const Tensor& z, const LatencyTable& lut, int k);
Tensor expected_fusion_latency(const Tensor& z, const LatencyTable& lut);
/// Sum over cells, the fusion cell and the fixed layers.
Tensor expected_total_latency(const std::vector<Tensor>& cell_masks, const Tensor& fusion_mask, const LatencyTable& lut);

/// ce + β · ln(lat); throws Error when lat ≤ 0.
Tensor total_loss(const Tensor& ce, const Tensor& lat, double beta);

/// Cost of the discrete genotype. Throws ArtifactError on topology mismatch.
double genotype_latency(const Genotype& g, const LatencyTable& lut);

}  // namespace lgc
