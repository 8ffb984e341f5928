#include "lgcnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lgcnet/error.hpp"

namespace lgc {
namespace {

using json = nlohmann::json;

/// Reads keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
  }

  std::string where(const char* key = nullptr) const {
    if (key == nullptr) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void Config::set_seed(uint64_t s) {
  seed = s;
  search.seed = s;
  finetune.seed = s;
}

Config parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Config c;
  Section root(doc, "");
  if (!root.has("seed")) throw ConfigError("config key 'seed' is required");
  uint64_t seed = 0;
  root.read("seed", seed);
  std::string out_dir = c.output_dir.string();
  root.read("output_dir", out_dir);
  c.output_dir = out_dir;

  {
    Section s = root.sub("topology");
    Topology& t = c.search.topology;
    s.read("cells", t.cells);
    s.read("reduction_indices", t.reduction_indices);
    s.read("channels", t.channels);
    s.read("fusion_taps", t.fusion_taps);
    s.read("fusion_channels", t.fusion_channels);
    s.read("num_classes", t.num_classes);
    s.finish();
  }
  {
    Section s = root.sub("search");
    SearchConfig& sc = c.search;
    s.read("steps", sc.steps);
    s.read("batch", sc.batch);
    s.read("beta", sc.beta);
    s.read("lr_arch", sc.arch_optimizer.lr);
    std::array<double, 2> betas{sc.arch_optimizer.beta1, sc.arch_optimizer.beta2};
    s.read("arch_betas", betas);
    sc.arch_optimizer.beta1 = betas[0];
    sc.arch_optimizer.beta2 = betas[1];
    s.read("arch_weight_decay", sc.arch_optimizer.weight_decay);
    s.read("lr_w_max", sc.lr_w_max);
    s.read("lr_w_min", sc.lr_w_min);
    s.read("momentum", sc.weight_optimizer.momentum);
    s.read("weight_decay", sc.weight_optimizer.weight_decay);
    s.read("temperature_initial", sc.temperature_initial);
    s.read("temperature_min", sc.temperature_min);
    s.read("augment", sc.augment);
    std::string sharing = "independent";
    s.read("sharing", sharing);
    if (sharing == "independent") sc.sharing = CellSharing::kIndependent;
    else if (sharing == "shared") sc.sharing = CellSharing::kShared;
    else throw ConfigError("search.sharing must be 'independent' or 'shared'");
    s.finish();
  }
  {
    Section s = root.sub("ggm");
    bool enabled = true;
    std::string mode = std::string(ggm_mode_name(c.search.ggm.mode));
    s.read("enabled", enabled);
    s.read("mode", mode);
    s.read("gamma", c.search.ggm.gamma);
    s.read("dim", c.search.ggm.dim);
    s.read("cascade", c.search.ggm.cascade);
    c.search.ggm.mode = enabled ? ggm_mode_from_name(mode) : GgmMode::kNone;
    s.finish();
  }
  {
    Section s = root.sub("lut");
    std::string mode = std::string(lut_mode_name(c.lut_mode));
    s.read("mode", mode);
    c.lut_mode = lut_mode_from_name(mode);
    s.read("overhead_us", c.lut.overhead_us);
    s.read("us_per_mac", c.lut.us_per_mac);
    s.read("warmup", c.lut.warmup);
    s.read("runs", c.lut.runs);
    s.finish();
  }
  {
    Section s = root.sub("data");
    DataConfig& d = c.data;
    s.read("source", d.source);
    std::string dir;
    s.read("dir", dir);
    d.dir = dir;
    s.read("train", d.synthetic.train);
    s.read("val", d.synthetic.val);
    s.read("height", d.synthetic.height);
    s.read("width", d.synthetic.width);
    s.read("noise", d.synthetic.noise);
    std::map<std::string, int> raw;
    s.read("label_map", raw);
    for (const auto& [k, v] : raw) {
      try {
        d.label_map[std::stoi(k)] = v;
      } catch (const std::exception&) {
        throw ConfigError("data.label_map key '" + k + "' is not an integer");
      }
    }
    if (d.source != "synthetic" && d.source != "directory") throw ConfigError("data.source must be 'synthetic' or 'directory'");
    if (d.source == "directory" && d.dir.empty()) throw ConfigError("data.dir is required for directory datasets");
    s.finish();
  }
  c.data.synthetic.num_classes = c.search.topology.num_classes;
  c.lut.height = c.data.synthetic.height;
  c.lut.width = c.data.synthetic.width;
  {
    Section s = root.sub("finetune");
    FinetuneConfig& f = c.finetune;
    s.read("steps", f.steps);
    s.read("batch", f.batch);
    s.read("lr", f.lr);
    s.read("power", f.power);
    s.read("momentum", f.sgd.momentum);
    s.read("weight_decay", f.sgd.weight_decay);
    s.read("eval_every", f.eval_every);
    s.read("augment", f.augment);
    s.read("scale_lo", f.scale_lo);
    s.read("scale_hi", f.scale_hi);
    s.finish();
  }
  {
    Section s = root.sub("random");
    s.read("n", c.random.n);
    if (s.has("band_us")) {
      std::array<double, 2> band{};
      s.read("band_us", band);
      if (!(band[0] <= band[1])) throw ConfigError("random.band_us must be [lo, hi] with lo <= hi");
      c.random.band = LatencyBand{band[0], band[1]};
    }
    s.finish();
  }
  {
    Section s = root.sub("ablate");
    std::vector<std::string> names;
    s.read("strategies", names);
    if (!names.empty()) {
      c.strategies.clear();
      for (const auto& n : names) c.strategies.push_back(strategy_from_name(n));
    }
    s.read("seeds", c.ablate_seeds);
    s.finish();
  }
  {
    Section s = root.sub("beta_sweep");
    s.read("betas", c.betas);
    s.finish();
  }
  root.finish();

  c.set_seed(seed);
  c.search.validate();
  c.finetune.validate();
  if (c.random.n < 0) throw ConfigError("random.n must be non-negative");
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Dataset load_dataset(const Config& config) {
  Dataset d = config.data.source == "directory" ? read_dataset(config.data.dir, config.data.label_map)
                                                : generate_synthetic(config.data.synthetic, config.seed);
  if (d.num_classes != config.search.topology.num_classes)
    throw ConfigError("dataset has " + std::to_string(d.num_classes) + " classes but topology.num_classes is " +
                      std::to_string(config.search.topology.num_classes));
  return d;
}

}  // namespace lgc
