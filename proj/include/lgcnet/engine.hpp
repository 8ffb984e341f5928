#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgcnet/arch.hpp"
#include "lgcnet/data.hpp"
#include "lgcnet/ggm.hpp"
#include "lgcnet/latency.hpp"
#include "lgcnet/network.hpp"
#include "lgcnet/optim.hpp"
#include "lgcnet/relax.hpp"

namespace lgc {

struct SearchConfig {
  Topology topology;
  long steps = 2000;
  int batch = 4;
  double beta = 0.005;
  AdamConfig arch_optimizer;
  SgdConfig weight_optimizer;
  double lr_w_max = 0.025;
  double lr_w_min = 0.001;
  double temperature_initial = 1.0;
  double temperature_min = 0.03;
  uint64_t seed = 0;
  GgmConfig ggm;
  CellSharing sharing = CellSharing::kIndependent;
  bool augment = false;

  /// Throws ConfigError on non-positive rates or sizes.
  void validate() const;
};

struct RunRecord {
  long step = 0;
  double ce = 0.0;
  double lat_us = 0.0;
  double loss = 0.0;
  double lambda = 0.0;
  double lr_w = 0.0;
  double lr_a = 0.0;
};

/// One JSON object per optimisation step.
struct RunLog {
  std::vector<RunRecord> records;
  std::string jsonl() const;
};

std::string to_json_line(const RunRecord& r);

/// Single-level search: every step samples Gumbel masks from the GGM-updated
/// parameters, runs the supernet on one minibatch, and updates the
/// architecture (Adam), the GGM (Adam) and the network weights (SGD) from one
/// backward pass of CE + β log(LAT).
class Searcher {
 public:
  Searcher(const SearchConfig& config, const Dataset& data, const LatencyTable& lut);

  /// Runs step `records().size()`. Throws DivergenceError on a non-finite loss.
  const RunRecord& step();
  long steps_done() const { return static_cast<long>(log_.records.size()); }
  Genotype decode() const { return lgc::decode(arch_, ggm_); }

  const RunLog& log() const { return log_; }
  ArchParams& arch() { return arch_; }
  GgmWeights& ggm() { return ggm_; }
  Network& network() { return network_; }
  const SearchConfig& config() const { return config_; }

 private:
  SearchConfig config_;
  const Dataset& data_;
  const LatencyTable& lut_;
  Rng net_rng_;
  Rng ggm_rng_;
  Rng gumbel_rng_;
  Rng data_rng_;
  Network network_;
  ArchParams arch_;
  GgmWeights ggm_;
  Adam arch_opt_;
  Sgd weight_opt_;
  RunLog log_;
};

struct SearchResult {
  Genotype genotype;
  RunLog log;
};

using StepCallback = std::function<void(const RunRecord&)>;

SearchResult search(const SearchConfig& config, const Dataset& data, const LatencyTable& lut,
                    const StepCallback& on_step = {});

// ---- finetuning ---------------------------------------------------------------

struct FinetuneConfig {
  long steps = 600;
  int batch = 8;
  double lr = 0.01;
  double power = 0.9;
  SgdConfig sgd{0.9, 5e-4};
  int eval_every = 100;
  bool augment = true;
  double scale_lo = 0.5;
  double scale_hi = 2.0;
  uint64_t seed = 0;

  void validate() const;
};

struct FinetuneResult {
  Network network;
  double best_miou = 0.0;
  double final_miou = 0.0;
};

/// Trains the discrete network from scratch with a poly schedule and returns
/// the best validation mIoU seen at the evaluation points.
FinetuneResult finetune(const Genotype& g, const Dataset& data, const FinetuneConfig& config);

/// mIoU of the network (eval mode) on `samples`.
double evaluate_miou(Network& net, std::span<const SegSample> samples, int num_classes, int batch = 8);

// ---- random search --------------------------------------------------------------

struct LatencyBand {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

/// Uniform choice per edge among that edge's candidates.
Genotype sample_genotype(const Topology& t, Rng& rng);

/// n genotypes; with a band, draws outside it are rejected. Throws Error when
/// `max_attempts` draws do not yield n genotypes.
std::vector<Genotype> sample_genotypes(const Topology& t, int n, const std::optional<LatencyBand>& band,
                                       const LatencyTable& lut, Rng& rng, long max_attempts = 1000000);

struct Candidate {
  std::string hash;
  Genotype genotype;
  double miou = 0.0;
  double latency_us = 0.0;
  int64_t params = 0;
};

/// 64-bit FNV-1a of the canonical genotype text, as 16 hex digits.
std::string genotype_hash(const Genotype& g);

/// Samples n genotypes, finetunes each like a searched one and evaluates it.
/// The result is sorted by genotype hash.
std::vector<Candidate> random_search_baseline(int n, const std::optional<LatencyBand>& band, const Dataset& data,
                                              const LatencyTable& lut, const FinetuneConfig& finetune_config,
                                              uint64_t seed);

// ---- ablations ------------------------------------------------------------------

enum class Strategy { kShared, kIndependent, kFc, kGcn };

std::string_view strategy_name(Strategy s);
Strategy strategy_from_name(std::string_view name);
/// Row label used in reports, e.g. "cell independent + GCN".
std::string_view strategy_label(Strategy s);

/// shared: one normal and one reduction matrix, no GGM; independent: per-cell
/// matrices, no GGM; fc / gcn: per-cell matrices with that GGM mode.
SearchConfig strategy_config(const SearchConfig& base, Strategy s);

struct StrategyRun {
  uint64_t seed = 0;
  Genotype genotype;
  double miou = 0.0;
  double latency_us = 0.0;
  int64_t params = 0;
};

struct AblationRow {
  Strategy strategy = Strategy::kGcn;
  std::vector<StrategyRun> runs;
  double miou_mean = 0.0;
  double miou_variance = 0.0;  // unbiased; 0 for a single run
  double params_mean = 0.0;
  double latency_mean = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_json() const;
};

void summarise(AblationRow& row);

using ProgressCallback = std::function<void(const std::string&)>;

AblationReport ablate(const SearchConfig& base, std::span<const Strategy> strategies, std::span<const uint64_t> seeds,
                      const Dataset& data, const LatencyTable& lut, const FinetuneConfig& finetune_config,
                      const ProgressCallback& progress = {});

struct BetaSweepRow {
  double beta = 0.0;
  Genotype genotype;
  double latency_us = 0.0;
  int64_t params = 0;
  std::optional<double> miou;
};

/// Searches once per β with everything else fixed. mIoU is filled in when a
/// finetune config is given.
std::vector<BetaSweepRow> beta_sweep(const SearchConfig& base, std::span<const double> betas, const Dataset& data,
                                     const LatencyTable& lut, const FinetuneConfig* finetune_config = nullptr,
                                     const ProgressCallback& progress = {});

std::string candidates_json(const std::vector<Candidate>& candidates);
std::string beta_sweep_json(const std::vector<BetaSweepRow>& rows);

}  // namespace lgc
