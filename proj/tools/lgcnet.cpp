// Command-line driver: latency tables, search, evaluation, baselines and
// visualisation. Exit codes: 0 ok, 1 config, 2 LUT, 3 divergence, 4 artifact.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "lgcnet/config.hpp"
#include "lgcnet/dot.hpp"
#include "lgcnet/engine.hpp"
#include "lgcnet/error.hpp"
#include "lgcnet/latency.hpp"

namespace fs = std::filesystem;
using namespace lgc;

namespace {

enum Exit { kOk = 0, kConfigExit = 1, kLutExit = 2, kDivergenceExit = 3, kArtifactExit = 4 };

struct Options {
  std::string config;
  std::string lut;
  std::string genotype;
  std::string out;
  std::string lut_mode;
  std::optional<uint64_t> seed;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

Config load(const Options& o) {
  Config c = load_config(o.config);
  if (o.seed) c.set_seed(*o.seed);
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.lut_mode.empty()) c.lut_mode = lut_mode_from_name(o.lut_mode);
  return c;
}

fs::path lut_path(const Options& o, const Config& c) { return o.lut.empty() ? c.output_dir / "lut.json" : fs::path(o.lut); }

LatencyTable load_lut(const Options& o, const Config& c) {
  const fs::path p = lut_path(o, c);
  if (!fs::exists(p)) throw LutError("latency table " + p.string() + " not found; run 'lut' first");
  LatencyTable lut = parse_lut(read_file(p));
  if (!(lut.topology == c.search.topology)) throw ArtifactError("latency table " + p.string() + " was built for another topology");
  return lut;
}

Genotype load_genotype(const Options& o) {
  if (o.genotype.empty()) throw ConfigError("--genotype is required");
  try {
    return parse_genotype(read_file(o.genotype));
  } catch (const ParseError& e) {
    throw ArtifactError(o.genotype + ": " + e.what());
  }
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

int cmd_lut(const Options& o) {
  const Config c = load(o);
  fs::create_directories(c.output_dir);
  const LatencyTable lut = build_lut(c.search.topology, c.lut_mode, c.lut);
  const fs::path p = lut_path(o, c);
  write_file(p, serialize_lut(lut));
  log_line("wrote " + p.string());
  return kOk;
}

int cmd_search(const Options& o) {
  const Config c = load(o);
  const LatencyTable lut = load_lut(o, c);
  const Dataset data = load_dataset(c);
  fs::create_directories(c.output_dir);
  Searcher s(c.search, data, lut);
  std::ofstream log(c.output_dir / "runlog.jsonl", std::ios::binary);
  try {
    for (long t = 0; t < c.search.steps; ++t) {
      const RunRecord& r = s.step();
      log << to_json_line(r) << "\n";
      if ((t + 1) % 100 == 0) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "step %ld: ce %.4f lat %.1f us lambda %.4f", r.step, r.ce, r.lat_us, r.lambda);
        log_line(buf);
      }
    }
  } catch (const DivergenceError& e) {
    log.flush();
    log_line(std::string(e.what()) + "; last valid step " + std::to_string(e.step() - 1));
    return kDivergenceExit;
  }
  const Genotype g = s.decode();
  write_file(c.output_dir / "genotype.json", serialize_genotype(g));
  char buf[128];
  std::snprintf(buf, sizeof buf, "genotype latency %.1f us, %lld params", genotype_latency(g, lut),
                static_cast<long long>(count_params(g)));
  log_line(buf);
  return kOk;
}

int cmd_eval(const Options& o) {
  const Config c = load(o);
  const Genotype g = load_genotype(o);
  if (!(g.topology == c.search.topology)) throw ArtifactError("genotype topology does not match the config");
  const LatencyTable lut = load_lut(o, c);
  const Dataset data = load_dataset(c);
  const FinetuneResult r = finetune(g, data, c.finetune);
  const double lat = genotype_latency(g, lut);
  nlohmann::json report{{"fps", 1e6 / lat},
                        {"latency_us", lat},
                        {"miou", r.best_miou},
                        {"miou_final", r.final_miou},
                        {"params", count_params(g)}};
  write_file(c.output_dir / "eval.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return kOk;
}

int cmd_random(const Options& o) {
  const Config c = load(o);
  const LatencyTable lut = load_lut(o, c);
  const Dataset data = load_dataset(c);
  const auto rows = random_search_baseline(c.random.n, c.random.band, data, lut, c.finetune, c.seed);
  write_file(c.output_dir / "random.json", candidates_json(rows));
  std::printf("%-18s %10s %12s %10s\n", "genotype", "mIoU", "latency_us", "params");
  for (const auto& r : rows)
    std::printf("%-18s %10.4f %12.1f %10lld\n", r.hash.c_str(), r.miou, r.latency_us, static_cast<long long>(r.params));
  return kOk;
}

int cmd_ablate(const Options& o) {
  const Config c = load(o);
  const LatencyTable lut = load_lut(o, c);
  const Dataset data = load_dataset(c);
  const AblationReport report = ablate(c.search, c.strategies, c.ablate_seeds, data, lut, c.finetune, log_line);
  write_file(c.output_dir / "ablation.json", report.to_json());
  std::printf("%-26s %10s %10s %12s %10s\n", "strategy", "mIoU", "variance", "params", "FPS");
  for (const auto& r : report.rows)
    std::printf("%-26s %10.4f %10.6f %12.0f %10.1f\n", std::string(strategy_label(r.strategy)).c_str(), r.miou_mean,
                r.miou_variance, r.params_mean, 1e6 / r.latency_mean);
  return kOk;
}

int cmd_beta_sweep(const Options& o) {
  const Config c = load(o);
  const LatencyTable lut = load_lut(o, c);
  const Dataset data = load_dataset(c);
  const auto rows = beta_sweep(c.search, c.betas, data, lut, c.finetune.steps > 0 ? &c.finetune : nullptr, log_line);
  write_file(c.output_dir / "beta_sweep.json", beta_sweep_json(rows));
  std::printf("%10s %12s %10s %10s\n", "beta", "latency_us", "params", "mIoU");
  for (const auto& r : rows)
    std::printf("%10g %12.1f %10lld %10s\n", r.beta, r.latency_us, static_cast<long long>(r.params),
                r.miou ? std::to_string(*r.miou).c_str() : "-");
  return kOk;
}

int cmd_dot(const Options& o) {
  const std::string dot = genotype_dot(load_genotype(o));
  if (o.out.empty()) {
    std::cout << dot;
  } else {
    write_file(fs::path(o.out) / "genotype.dot", dot);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latency-constrained cell-independent architecture search for segmentation"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (needs_config) opt->required();
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "overrides the config seed");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"lut", "build the latency lookup table", cmd_lut},
      {"search", "run the architecture search", cmd_search},
      {"eval", "finetune a genotype and report mIoU, params and latency", cmd_eval},
      {"random", "random-search baseline", cmd_random},
      {"ablate", "compare cell sharing / independent / FC / GCN strategies", cmd_ablate},
      {"beta-sweep", "search once per latency weight", cmd_beta_sweep},
      {"dot", "render a genotype as Graphviz DOT", cmd_dot},
  };
  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    const bool is_dot = std::string(cmd.name) == "dot";
    add_common(sub, !is_dot);
    sub->add_option("--lut", o.lut, "latency table path (default <out>/lut.json)");
    sub->add_option("--genotype", o.genotype, "genotype file");
    sub->add_option("--lut-mode", o.lut_mode, "measured or analytic")->check(CLI::IsMember({"measured", "analytic"}));
    subs.emplace_back(sub, cmd.run);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigExit;
  }
  try {
    for (const auto& [sub, run] : subs)
      if (sub->parsed()) return run(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigExit;
  } catch (const LutError& e) {
    std::fprintf(stderr, "LUT error: %s\n", e.what());
    return kLutExit;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergenceExit;
  } catch (const ArtifactError& e) {
    std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
    return kArtifactExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigExit;
  }
  return kOk;
}
