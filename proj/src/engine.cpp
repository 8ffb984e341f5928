#include "lgcnet/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "lgcnet/error.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {
namespace {

using json = nlohmann::json;

enum RngStream : uint64_t { kNetStream = 1, kGgmStream = 2, kGumbelStream = 3, kDataStream = 4, kFinetuneStream = 5 };

void check_data(const Topology& t, const Dataset& data, bool need_val) {
  if (data.num_classes != t.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, topology expects " +
                      std::to_string(t.num_classes));
  if (data.train.empty()) throw ConfigError("dataset has no training samples");
  if (need_val && data.val.empty()) throw ConfigError("dataset has no validation samples");
}

std::vector<int> draw_indices(int n, int batch, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(batch));
  for (int& i : idx) i = rng.uniform_int(0, n - 1);
  return idx;
}

Batch training_batch(const std::vector<SegSample>& train, int batch, bool augment, Rng& rng) {
  const std::vector<int> idx = draw_indices(static_cast<int>(train.size()), batch, rng);
  if (!augment) return make_batch(train, idx);
  std::vector<SegSample> aug;
  for (int i : idx) {
    const SegSample& s = train[static_cast<size_t>(i)];
    aug.push_back(lgc::augment(s, s.height, s.width, rng));
  }
  std::vector<int> all(aug.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return make_batch(aug, all);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

// ---- configuration / logs ---------------------------------------------------------

void SearchConfig::validate() const {
  topology.validate();
  if (steps < 0) throw ConfigError("search.steps must be non-negative");
  if (batch <= 0) throw ConfigError("search.batch must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("search.beta must be non-negative");
  if (!(arch_optimizer.lr > 0.0)) throw ConfigError("search.lr_arch must be positive");
  if (!(lr_w_max > 0.0) || !(lr_w_min > 0.0) || lr_w_min > lr_w_max)
    throw ConfigError("search weight learning rates need 0 < lr_w_min <= lr_w_max");
  if (!(temperature_min > 0.0) || temperature_min > temperature_initial)
    throw ConfigError("search temperatures need 0 < min <= initial");
  if (ggm.dim <= 0) throw ConfigError("ggm.dim must be positive");
}

std::string to_json_line(const RunRecord& r) {
  json j{{"ce", r.ce}, {"lambda", r.lambda}, {"lat_us", r.lat_us}, {"loss", r.loss},
         {"lr_a", r.lr_a}, {"lr_w", r.lr_w}, {"step", r.step}};
  return j.dump();
}

std::string RunLog::jsonl() const {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  return out;
}

// ---- search -----------------------------------------------------------------------

Searcher::Searcher(const SearchConfig& config, const Dataset& data, const LatencyTable& lut)
    : config_(config),
      data_(data),
      lut_(lut),
      net_rng_(Rng::derive(config.seed, kNetStream)),
      ggm_rng_(Rng::derive(config.seed, kGgmStream)),
      gumbel_rng_(Rng::derive(config.seed, kGumbelStream)),
      data_rng_(Rng::derive(config.seed, kDataStream)),
      network_((config.validate(), config.topology), net_rng_),
      arch_(config.topology, config.sharing),
      ggm_(GgmWeights::make(config.ggm, config.topology.cells, CellTemplate::p(), CellTemplate::q(), ggm_rng_)),
      arch_opt_(
          [&] {
            std::vector<Tensor> p = arch_.parameters();
            for (auto& t : ggm_.parameters()) p.push_back(t);
            return p;
          }(),
          config.arch_optimizer),
      weight_opt_(network_.parameters(), config.weight_optimizer) {
  if (!(lut.topology == config.topology)) throw ArtifactError("latency table was built for a different topology");
  check_data(config.topology, data, false);
}

const RunRecord& Searcher::step() {
  const long t = steps_done();
  const long total = std::max<long>(config_.steps, 1);
  const double lambda = temperature_at(std::min(t, total), {config_.temperature_initial, config_.temperature_min, total});
  const double lr_w = cosine_lr(t, total, config_.lr_w_max, config_.lr_w_min);
  const Batch batch = training_batch(data_.train, config_.batch, config_.augment, data_rng_);

  RunRecord rec;
  try {
    const std::vector<Tensor> updated = ggm_chain(arch_.per_cell_logits(), ggm_);
    std::vector<Tensor> masks;
    for (const Tensor& theta : updated)
      masks.push_back(gumbel_softmax_logits(theta, sample_gumbel(CellTemplate::p(), CellTemplate::q(), gumbel_rng_), lambda));
    const Tensor fusion_noise = sample_gumbel(FusionTemplate::kEdges, FusionTemplate::kQ, gumbel_rng_);
    const Tensor fusion_mask =
        gumbel_softmax_logits(arch_.fusion_logits(), fusion_noise, lambda, ArchParams::fusion_widths());

    const Tensor logits = network_.forward(batch.images, &masks, &fusion_mask, true);
    const Tensor ce = ops::cross_entropy(logits, batch.labels);
    const Tensor lat = expected_total_latency(masks, fusion_mask, lut_);
    const Tensor loss = total_loss(ce, lat, config_.beta);
    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");

    arch_opt_.zero_grad();
    weight_opt_.zero_grad();
    backward(loss);
    arch_opt_.step();
    weight_opt_.step(lr_w);
    rec = {t, ce.item(), lat.item(), loss.item(), lambda, lr_w, config_.arch_optimizer.lr};
  } catch (const NumericError& e) {
    active_tape().clear();
    throw DivergenceError("search diverged at step " + std::to_string(t) + ": " + e.what(), t);
  }
  log_.records.push_back(rec);
  return log_.records.back();
}

SearchResult search(const SearchConfig& config, const Dataset& data, const LatencyTable& lut, const StepCallback& on_step) {
  Searcher s(config, data, lut);
  for (long t = 0; t < config.steps; ++t) {
    const RunRecord& r = s.step();
    if (on_step) on_step(r);
  }
  return {s.decode(), s.log()};
}

// ---- finetune ---------------------------------------------------------------------

void FinetuneConfig::validate() const {
  if (steps < 0 || batch <= 0 || eval_every <= 0) throw ConfigError("finetune needs steps >= 0, batch > 0, eval_every > 0");
  if (!(lr > 0.0) || !(power > 0.0)) throw ConfigError("finetune lr and power must be positive");
  if (!(scale_lo > 0.0) || scale_lo > scale_hi) throw ConfigError("finetune scale range must satisfy 0 < lo <= hi");
}

double evaluate_miou(Network& net, std::span<const SegSample> samples, int num_classes, int batch) {
  NoGradGuard no_grad;
  ConfusionMatrix cm(num_classes);
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch)) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(samples.size(), start + static_cast<size_t>(batch)); ++i) idx.push_back(static_cast<int>(i));
    const Batch b = make_batch(samples, idx);
    const Tensor logits = net.forward(b.images, nullptr, nullptr, false);
    cm.add(b.labels, argmax_classes(logits));
  }
  return miou(cm);
}

FinetuneResult finetune(const Genotype& g, const Dataset& data, const FinetuneConfig& config) {
  config.validate();
  validate_genotype(g);
  check_data(g.topology, data, true);
  Rng net_rng = Rng::derive(config.seed, kFinetuneStream);
  Rng data_rng = Rng::derive(config.seed, kDataStream);
  FinetuneResult result{Network(g, net_rng), 0.0, 0.0};
  Network& net = result.network;
  Sgd opt(net.parameters(), config.sgd);
  const int h = data.train.front().height, w = data.train.front().width;
  bool evaluated = false;

  for (long t = 0; t < config.steps; ++t) {
    std::vector<SegSample> samples;
    for (int i : draw_indices(static_cast<int>(data.train.size()), config.batch, data_rng)) {
      const SegSample& s = data.train[static_cast<size_t>(i)];
      samples.push_back(config.augment
                            ? apply_augment(s, draw_augment(s, h, w, data_rng, config.scale_lo, config.scale_hi), h, w)
                            : s);
    }
    std::vector<int> all(samples.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const Batch b = make_batch(samples, all);
    try {
      const Tensor loss = ops::cross_entropy(net.forward(b.images, nullptr, nullptr, true), b.labels);
      if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
      opt.zero_grad();
      backward(loss);
    } catch (const NumericError& e) {
      active_tape().clear();
      throw DivergenceError("finetune diverged at step " + std::to_string(t) + ": " + e.what(), t);
    }
    opt.step(poly_lr(t, config.steps, config.lr, config.power));
    if ((t + 1) % config.eval_every == 0 || t + 1 == config.steps) {
      const double m = evaluate_miou(net, data.val, data.num_classes);
      result.best_miou = evaluated ? std::max(result.best_miou, m) : m;
      result.final_miou = m;
      evaluated = true;
    }
  }
  if (!evaluated) {
    result.final_miou = evaluate_miou(net, data.val, data.num_classes);
    result.best_miou = result.final_miou;
  }
  return result;
}

// ---- random search ----------------------------------------------------------------

Genotype sample_genotype(const Topology& t, Rng& rng) {
  Genotype g;
  g.topology = t;
  const auto backbone = backbone_candidates();
  for (int k = 0; k < t.cells; ++k) {
    std::vector<Primitive> ops;
    for (int e = 0; e < CellTemplate::p(); ++e)
      ops.push_back(backbone[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(backbone.size()) - 1))]);
    g.cells.push_back(std::move(ops));
  }
  for (int e = 0; e < FusionTemplate::kEdges; ++e) {
    const auto cands = FusionTemplate::candidates(e);
    g.fusion.push_back(cands[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(cands.size()) - 1))]);
  }
  return g;
}

std::vector<Genotype> sample_genotypes(const Topology& t, int n, const std::optional<LatencyBand>& band,
                                       const LatencyTable& lut, Rng& rng, long max_attempts) {
  if (n < 0) throw ConfigError("random search needs n >= 0");
  std::vector<Genotype> out;
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (attempts++ >= max_attempts)
      throw Error("latency band infeasible: " + std::to_string(out.size()) + " of " + std::to_string(n) +
                  " genotypes found in " + std::to_string(max_attempts) + " draws");
    Genotype g = sample_genotype(t, rng);
    if (band) {
      const double lat = genotype_latency(g, lut);
      if (lat < band->lo || lat > band->hi) continue;
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string genotype_hash(const Genotype& g) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : serialize_genotype(g)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Candidate> random_search_baseline(int n, const std::optional<LatencyBand>& band, const Dataset& data,
                                              const LatencyTable& lut, const FinetuneConfig& finetune_config,
                                              uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x7a2d);
  std::vector<Candidate> out;
  for (auto& g : sample_genotypes(lut.topology, n, band, lut, rng)) {
    Candidate c;
    c.hash = genotype_hash(g);
    c.latency_us = genotype_latency(g, lut);
    c.params = count_params(g);
    c.miou = finetune(g, data, finetune_config).best_miou;
    c.genotype = std::move(g);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.hash < b.hash; });
  return out;
}

// ---- ablations ----------------------------------------------------------------------

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kShared: return "shared";
    case Strategy::kIndependent: return "independent";
    case Strategy::kFc: return "fc";
    case Strategy::kGcn: return "gcn";
  }
  return "gcn";
}

Strategy strategy_from_name(std::string_view name) {
  for (Strategy s : {Strategy::kShared, Strategy::kIndependent, Strategy::kFc, Strategy::kGcn})
    if (strategy_name(s) == name) return s;
  throw ConfigError("unknown ablation strategy '" + std::string(name) + "'");
}

std::string_view strategy_label(Strategy s) {
  switch (s) {
    case Strategy::kShared: return "cell shared";
    case Strategy::kIndependent: return "cell independent";
    case Strategy::kFc: return "cell independent + FC";
    case Strategy::kGcn: return "cell independent + GCN";
  }
  return "";
}

SearchConfig strategy_config(const SearchConfig& base, Strategy s) {
  SearchConfig c = base;
  switch (s) {
    case Strategy::kShared:
      c.sharing = CellSharing::kShared;
      c.ggm.mode = GgmMode::kNone;
      break;
    case Strategy::kIndependent:
      c.sharing = CellSharing::kIndependent;
      c.ggm.mode = GgmMode::kNone;
      break;
    case Strategy::kFc:
      c.sharing = CellSharing::kIndependent;
      c.ggm.mode = GgmMode::kFc;
      break;
    case Strategy::kGcn:
      c.sharing = CellSharing::kIndependent;
      c.ggm.mode = GgmMode::kEdgeSimilarity;
      break;
  }
  return c;
}

void summarise(AblationRow& row) {
  std::vector<double> m, p, l;
  for (const auto& r : row.runs) {
    m.push_back(r.miou);
    p.push_back(static_cast<double>(r.params));
    l.push_back(r.latency_us);
  }
  row.miou_mean = mean_of(m);
  row.params_mean = mean_of(p);
  row.latency_mean = mean_of(l);
  double ss = 0.0;
  for (double x : m) ss += (x - row.miou_mean) * (x - row.miou_mean);
  row.miou_variance = m.size() > 1 ? ss / static_cast<double>(m.size() - 1) : 0.0;
}

AblationReport ablate(const SearchConfig& base, std::span<const Strategy> strategies, std::span<const uint64_t> seeds,
                      const Dataset& data, const LatencyTable& lut, const FinetuneConfig& finetune_config,
                      const ProgressCallback& progress) {
  AblationReport report;
  for (Strategy s : strategies) {
    AblationRow row;
    row.strategy = s;
    for (uint64_t seed : seeds) {
      SearchConfig c = strategy_config(base, s);
      c.seed = seed;
      const Genotype g = search(c, data, lut).genotype;
      FinetuneConfig fc = finetune_config;
      fc.seed = seed;
      StrategyRun run{seed, g, finetune(g, data, fc).best_miou, genotype_latency(g, lut), count_params(g)};
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed %llu: mIoU %.4f, %.1f us", std::string(strategy_name(s)).c_str(),
                      static_cast<unsigned long long>(seed), run.miou, run.latency_us);
        progress(buf);
      }
      row.runs.push_back(std::move(run));
    }
    summarise(row);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string AblationReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json runs = json::array();
    for (const auto& run : r.runs)
      runs.push_back(json{{"genotype_hash", genotype_hash(run.genotype)},
                          {"latency_us", run.latency_us},
                          {"miou", run.miou},
                          {"params", run.params},
                          {"seed", run.seed}});
    rows_j.push_back(json{{"fps", r.latency_mean > 0.0 ? 1e6 / r.latency_mean : 0.0},
                          {"label", strategy_label(r.strategy)},
                          {"latency_us_mean", r.latency_mean},
                          {"miou_mean", r.miou_mean},
                          {"miou_variance", r.miou_variance},
                          {"params_mean", r.params_mean},
                          {"runs", runs},
                          {"strategy", strategy_name(r.strategy)}});
  }
  return json{{"rows", rows_j}}.dump(2) + "\n";
}

std::vector<BetaSweepRow> beta_sweep(const SearchConfig& base, std::span<const double> betas, const Dataset& data,
                                     const LatencyTable& lut, const FinetuneConfig* finetune_config,
                                     const ProgressCallback& progress) {
  std::vector<BetaSweepRow> rows;
  for (double beta : betas) {
    SearchConfig c = base;
    c.beta = beta;
    BetaSweepRow row;
    row.beta = beta;
    row.genotype = search(c, data, lut).genotype;
    row.latency_us = genotype_latency(row.genotype, lut);
    row.params = count_params(row.genotype);
    if (finetune_config) row.miou = finetune(row.genotype, data, *finetune_config).best_miou;
    if (progress) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "beta %g: %.1f us", beta, row.latency_us);
      progress(buf);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string candidates_json(const std::vector<Candidate>& candidates) {
  json rows = json::array();
  double m = 0.0, l = 0.0;
  for (const auto& c : candidates) {
    rows.push_back(json{{"genotype_hash", c.hash}, {"latency_us", c.latency_us}, {"miou", c.miou}, {"params", c.params}});
    m += c.miou;
    l += c.latency_us;
  }
  const double n = candidates.empty() ? 1.0 : static_cast<double>(candidates.size());
  return json{{"candidates", rows}, {"latency_us_mean", l / n}, {"miou_mean", m / n}}.dump(2) + "\n";
}

std::string beta_sweep_json(const std::vector<BetaSweepRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"beta", r.beta}, {"genotype_hash", genotype_hash(r.genotype)}, {"latency_us", r.latency_us}, {"params", r.params}};
    j["miou"] = r.miou ? json(*r.miou) : json(nullptr);
    out.push_back(j);
  }
  return json{{"rows", out}}.dump(2) + "\n";
}

}  // namespace lgc
