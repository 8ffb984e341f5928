#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lgcnet/data.hpp"
#include "lgcnet/engine.hpp"
#include "lgcnet/latency.hpp"

namespace lgc {

struct DataConfig {
  std::string source = "synthetic";  // or "directory"
  std::filesystem::path dir;
  SyntheticSpec synthetic;
  std::map<int, int> label_map;
};

struct RandomConfig {
  int n = 10;
  std::optional<LatencyBand> band;
};

/// Parsed experiment configuration. Every section is optional except the
/// top-level "seed"; unknown keys are rejected.
struct Config {
  uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  SearchConfig search;
  LutMode lut_mode = LutMode::kAnalytic;
  LutOptions lut;
  DataConfig data;
  FinetuneConfig finetune;
  RandomConfig random;
  std::vector<Strategy> strategies{Strategy::kShared, Strategy::kIndependent, Strategy::kFc, Strategy::kGcn};
  std::vector<uint64_t> ablate_seeds{1, 2, 3};
  std::vector<double> betas{0.0005, 0.005, 0.05};

  /// Re-seeds the search, finetune and data generator.
  void set_seed(uint64_t s);
};

/// Throws ConfigError naming the offending key.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

/// Generates or reads the dataset described by `config.data`.
Dataset load_dataset(const Config& config);

}  // namespace lgc
