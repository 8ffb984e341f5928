#include "lgcnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "lgcnet/error.hpp"

namespace lgc {
namespace {

using json = nlohmann::json;

enum class ShapeKind { kRectangle, kEllipse, kStripes, kTriangle, kCross };
constexpr int kMaxClasses = 6;

struct Canvas {
  int h;
  int w;
  std::vector<double>& image;
  std::vector<int>& label;

  void paint(int y, int x, int cls, const double (&rgb)[3], double noise, Rng& rng) {
    const size_t hw = static_cast<size_t>(h) * static_cast<size_t>(w);
    const size_t i = static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x);
    for (size_t c = 0; c < 3; ++c) image[c * hw + i] = std::clamp(rgb[c] + noise * rng.normal(), 0.0, 1.0);
    label[i] = cls;
  }
};

bool inside(ShapeKind kind, double dy, double dx, double ry, double rx, bool horizontal) {
  // dy, dx are offsets from the shape centre; ry, rx its half-extents.
  if (std::abs(dy) > ry || std::abs(dx) > rx) return false;
  switch (kind) {
    case ShapeKind::kRectangle: return true;
    case ShapeKind::kEllipse: return (dy * dy) / (ry * ry) + (dx * dx) / (rx * rx) <= 1.0;
    case ShapeKind::kStripes: {
      const double t = horizontal ? dy + ry : dx + rx;
      return std::fmod(t, 6.0) < 3.0;
    }
    case ShapeKind::kTriangle: {
      const double frac = (dy + ry) / (2.0 * ry);  // 0 at the apex, 1 at the base
      return std::abs(dx) <= frac * rx;
    }
    case ShapeKind::kCross: return std::abs(dy) <= ry / 3.0 || std::abs(dx) <= rx / 3.0;
  }
  return false;
}

SegSample draw_sample(const SyntheticSpec& spec, Rng& rng) {
  SegSample s;
  s.height = spec.height;
  s.width = spec.width;
  const size_t hw = static_cast<size_t>(spec.height) * static_cast<size_t>(spec.width);
  s.image.assign(3 * hw, 0.0);
  s.label.assign(hw, 0);
  Canvas canvas{spec.height, spec.width, s.image, s.label};

  double bg[3];
  for (double& c : bg) c = rng.uniform(0.05, 0.25);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) canvas.paint(y, x, 0, bg, spec.noise, rng);

  std::vector<int> instances;
  for (int c = 1; c < spec.num_classes; ++c) {
    const int n = rng.uniform_int(1, 2);
    for (int i = 0; i < n; ++i) instances.push_back(c);
  }
  std::shuffle(instances.begin(), instances.end(), rng.engine());

  const double h = spec.height, w = spec.width;
  for (int cls : instances) {
    const auto kind = static_cast<ShapeKind>(cls - 1);
    const bool large = kind == ShapeKind::kStripes || kind == ShapeKind::kCross;
    const double ry = rng.uniform(large ? 0.15 : 0.12, large ? 0.3 : 0.25) * h;
    const double rx = rng.uniform(large ? 0.1 : 0.07, large ? 0.2 : 0.15) * w;
    const double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
    const bool horizontal = rng.bernoulli(0.5);
    double rgb[3];
    for (double& c : rgb) c = rng.uniform(0.5, 1.0);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(cy + ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(cx + rx)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (inside(kind, y + 0.5 - cy, x + 0.5 - cx, ry, rx, horizontal)) canvas.paint(y, x, cls, rgb, spec.noise, rng);
  }
  return s;
}

double bilinear_at(const std::vector<double>& plane, size_t offset, int h, int w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto px = [&](int y, int x) { return plane[offset + static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)]; };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
}

SegSample flip_horizontal(const SegSample& s) {
  SegSample out = s;
  const size_t hw = static_cast<size_t>(s.height) * static_cast<size_t>(s.width);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const size_t dst = static_cast<size_t>(y * s.width + x);
      const size_t src = static_cast<size_t>(y * s.width + (s.width - 1 - x));
      for (size_t c = 0; c < 3; ++c) out.image[c * hw + dst] = s.image[c * hw + src];
      out.label[dst] = s.label[src];
    }
  return out;
}

SegSample rescale(const SegSample& s, int nh, int nw) {
  if (nh == s.height && nw == s.width) return s;
  SegSample out;
  out.height = nh;
  out.width = nw;
  const size_t hw = static_cast<size_t>(s.height) * static_cast<size_t>(s.width);
  const size_t nhw = static_cast<size_t>(nh) * static_cast<size_t>(nw);
  out.image.assign(3 * nhw, 0.0);
  out.label.assign(nhw, kIgnoreLabel);
  const double ry = static_cast<double>(s.height) / nh, rx = static_cast<double>(s.width) / nw;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      const size_t i = static_cast<size_t>(y) * static_cast<size_t>(nw) + static_cast<size_t>(x);
      const double sy = (y + 0.5) * ry - 0.5, sx = (x + 0.5) * rx - 0.5;
      for (size_t c = 0; c < 3; ++c) out.image[c * nhw + i] = bilinear_at(s.image, c * hw, s.height, s.width, sy, sx);
      const int ny = std::min(s.height - 1, static_cast<int>((y + 0.5) * ry));
      const int nx = std::min(s.width - 1, static_cast<int>((x + 0.5) * rx));
      out.label[i] = s.label[static_cast<size_t>(ny) * static_cast<size_t>(s.width) + static_cast<size_t>(nx)];
    }
  return out;
}

int scaled_extent(int n, double scale) { return std::max(1, static_cast<int>(std::lround(n * scale))); }

void write_pnm(const std::filesystem::path& path, const char* magic, int h, int w, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<unsigned char> read_pnm(const std::filesystem::path& path, const std::string& magic, int& h, int& w, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string m;
  int maxval = 0;
  in >> m >> w >> h >> maxval;
  if (m != magic || w <= 0 || h <= 0 || maxval != 255) throw ParseError(path.string() + ": unsupported raster header");
  in.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(channels));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError(path.string() + ": truncated raster");
  return bytes;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
  if (spec.num_classes < 2 || spec.num_classes > kMaxClasses)
    throw ConfigError("synthetic data needs 2 <= num_classes <= " + std::to_string(kMaxClasses));
  if (spec.height <= 0 || spec.width <= 0 || spec.train < 0 || spec.val < 0 || spec.noise < 0.0)
    throw ConfigError("invalid synthetic data spec");
  Dataset d;
  d.num_classes = spec.num_classes;
  Rng rng = Rng::derive(seed, 0xda7a);
  for (int i = 0; i < spec.train; ++i) d.train.push_back(draw_sample(spec, rng));
  for (int i = 0; i < spec.val; ++i) d.val.push_back(draw_sample(spec, rng));
  return d;
}

AugmentParams draw_augment(const SegSample& s, int out_h, int out_w, Rng& rng, double scale_lo, double scale_hi) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.scale = rng.uniform(scale_lo, scale_hi);
  const int nh = scaled_extent(s.height, p.scale), nw = scaled_extent(s.width, p.scale);
  p.crop_y = nh >= out_h ? rng.uniform_int(0, nh - out_h) : rng.uniform_int(nh - out_h, 0);
  p.crop_x = nw >= out_w ? rng.uniform_int(0, nw - out_w) : rng.uniform_int(nw - out_w, 0);
  return p;
}

SegSample apply_augment(const SegSample& s, const AugmentParams& p, int out_h, int out_w) {
  if (!(p.scale > 0.0)) throw Error("augment: scale must be positive");
  SegSample cur = p.flip ? flip_horizontal(s) : s;
  cur = rescale(cur, scaled_extent(s.height, p.scale), scaled_extent(s.width, p.scale));
  if (p.crop_y == 0 && p.crop_x == 0 && cur.height == out_h && cur.width == out_w) return cur;
  SegSample out;
  out.height = out_h;
  out.width = out_w;
  const size_t hw = static_cast<size_t>(cur.height) * static_cast<size_t>(cur.width);
  const size_t ohw = static_cast<size_t>(out_h) * static_cast<size_t>(out_w);
  out.image.assign(3 * ohw, 0.0);
  out.label.assign(ohw, kIgnoreLabel);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const int sy = y + p.crop_y, sx = x + p.crop_x;
      if (sy < 0 || sx < 0 || sy >= cur.height || sx >= cur.width) continue;
      const size_t src = static_cast<size_t>(sy) * static_cast<size_t>(cur.width) + static_cast<size_t>(sx);
      const size_t dst = static_cast<size_t>(y) * static_cast<size_t>(out_w) + static_cast<size_t>(x);
      for (size_t c = 0; c < 3; ++c) out.image[c * ohw + dst] = cur.image[c * hw + src];
      out.label[dst] = cur.label[src];
    }
  return out;
}

SegSample augment(const SegSample& s, int out_h, int out_w, Rng& rng) {
  return apply_augment(s, draw_augment(s, out_h, out_w, rng), out_h, out_w);
}

Batch make_batch(std::span<const SegSample> samples, std::span<const int> indices) {
  if (indices.empty()) throw Error("make_batch: empty batch");
  const SegSample& first = samples[static_cast<size_t>(indices[0])];
  const int h = first.height, w = first.width;
  const size_t hw = static_cast<size_t>(h) * static_cast<size_t>(w);
  Batch b;
  b.images = Tensor::zeros({static_cast<int64_t>(indices.size()), 3, h, w});
  auto dst = b.images.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    const SegSample& s = samples[static_cast<size_t>(indices[i])];
    if (s.height != h || s.width != w) throw ShapeError("make_batch: samples differ in size");
    std::copy(s.image.begin(), s.image.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * 3 * hw));
    b.labels.insert(b.labels.end(), s.label.begin(), s.label.end());
  }
  return b;
}

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw Error("confusion matrix needs at least one class");
  counts_.assign(static_cast<size_t>(k_) * static_cast<size_t>(k_), 0);
}

void ConfusionMatrix::add(int truth, int prediction, int64_t count) {
  if (truth < 0 || truth >= k_ || prediction < 0 || prediction >= k_)
    throw Error("confusion matrix: class index out of range");
  counts_[static_cast<size_t>(truth) * static_cast<size_t>(k_) + static_cast<size_t>(prediction)] += count;
}

void ConfusionMatrix::add(std::span<const int> labels, std::span<const int> predictions, int ignore_index) {
  if (labels.size() != predictions.size()) throw ShapeError("confusion matrix: label/prediction size mismatch");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != ignore_index) add(labels[i], predictions[i]);
}

int64_t ConfusionMatrix::at(int truth, int prediction) const {
  return counts_.at(static_cast<size_t>(truth) * static_cast<size_t>(k_) + static_cast<size_t>(prediction));
}

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t c : counts_) n += c;
  return n;
}

double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("miou: empty confusion matrix");
  const int k = cm.num_classes();
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);
      fp += cm.at(o, c);
    }
    const int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(denom);
    ++used;
  }
  return sum / used;
}

std::vector<int> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_classes: expected (N,K,H,W)");
  const int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<int> out(static_cast<size_t>(n * hw));
  const auto d = logits.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      int best = 0;
      for (int64_t c = 1; c < k; ++c)
        if (d[static_cast<size_t>((b * k + c) * hw + i)] > d[static_cast<size_t>((b * k + best) * hw + i)]) best = static_cast<int>(c);
      out[static_cast<size_t>(b * hw + i)] = best;
    }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  json manifest{{"num_classes", data.num_classes}, {"train", json::array()}, {"val", json::array()}};
  int index = 0;
  auto write_split = [&](const std::vector<SegSample>& split, const char* key) {
    for (const auto& s : split) {
      char name[16];
      std::snprintf(name, sizeof name, "%04d", index++);
      const size_t hw = static_cast<size_t>(s.height) * static_cast<size_t>(s.width);
      std::vector<unsigned char> rgb(3 * hw), lab(hw);
      for (size_t i = 0; i < hw; ++i) {
        for (size_t c = 0; c < 3; ++c)
          rgb[3 * i + c] = static_cast<unsigned char>(std::lround(std::clamp(s.image[c * hw + i], 0.0, 1.0) * 255.0));
        lab[i] = static_cast<unsigned char>(s.label[i]);
      }
      const std::string image = std::string("images/") + name + ".ppm";
      const std::string label = std::string("labels/") + name + ".pgm";
      write_pnm(dir / image, "P6", s.height, s.width, rgb);
      write_pnm(dir / label, "P5", s.height, s.width, lab);
      manifest[key].push_back(json{{"image", image}, {"label", label}});
    }
  };
  write_split(data.train, "train");
  write_split(data.val, "val");
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir, const std::map<int, int>& label_map) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot read " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Dataset d;
  if (!manifest.contains("num_classes") || !manifest["num_classes"].is_number_integer())
    throw ParseError("manifest: missing integer 'num_classes'");
  d.num_classes = manifest["num_classes"].get<int>();
  if (d.num_classes < 2) throw ParseError("manifest: num_classes must be at least 2");
  auto read_split = [&](const char* key, std::vector<SegSample>& split) {
    if (!manifest.contains(key) || !manifest[key].is_array()) throw ParseError(std::string("manifest: missing list '") + key + "'");
    for (const auto& entry : manifest[key]) {
      const auto image = entry.at("image").get<std::string>();
      const auto label = entry.at("label").get<std::string>();
      SegSample s;
      int lh = 0, lw = 0;
      const auto rgb = read_pnm(dir / image, "P6", s.height, s.width, 3);
      const auto lab = read_pnm(dir / label, "P5", lh, lw, 1);
      if (lh != s.height || lw != s.width) throw ParseError(label + ": size differs from " + image);
      const size_t hw = static_cast<size_t>(s.height) * static_cast<size_t>(s.width);
      s.image.resize(3 * hw);
      s.label.resize(hw);
      for (size_t i = 0; i < hw; ++i) {
        for (size_t c = 0; c < 3; ++c) s.image[c * hw + i] = rgb[3 * i + c] / 255.0;
        int v = lab[i];
        if (auto it = label_map.find(v); it != label_map.end()) v = it->second;
        if (v != kIgnoreLabel && (v < 0 || v >= d.num_classes))
          throw ParseError(label + ": label value " + std::to_string(v) + " outside [0, " + std::to_string(d.num_classes) + ")");
        s.label[i] = v;
      }
      split.push_back(std::move(s));
    }
  };
  read_split("train", d.train);
  read_split("val", d.val);
  return d;
}

}  // namespace lgc
