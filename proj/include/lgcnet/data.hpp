#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "lgcnet/rng.hpp"
#include "lgcnet/tensor.hpp"

namespace lgc {

constexpr int kIgnoreLabel = 255;

/// One image (3 x H x W, values in [0, 1], planar) with its label map.
struct SegSample {
  int height = 0;
  int width = 0;
  std::vector<double> image;
  std::vector<int> label;  // [0, K) or kIgnoreLabel

  bool operator==(const SegSample&) const = default;
};

struct Dataset {
  int num_classes = 0;
  std::vector<SegSample> train;
  std::vector<SegSample> val;

  bool operator==(const Dataset&) const = default;
};

/// Class 0 is background; class c >= 1 is a shape type (rectangle, ellipse,
/// stripes, triangle, cross) drawn in a random bright colour, so shape rather
/// than colour identifies the class.
struct SyntheticSpec {
  int train = 64;
  int val = 16;
  int height = 64;
  int width = 128;
  int num_classes = 4;
  double noise = 0.08;  // std-dev of background and shape noise
};

/// Pure function of (spec, seed). Throws ConfigError when K < 2 or K > 6.
Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  int crop_y = 0;  // offset of the crop in the rescaled image; may be negative (padding)
  int crop_x = 0;
};

/// Draws flip (p = 0.5), scale in [lo, hi] and a crop offset for an output of
/// out_h x out_w.
AugmentParams draw_augment(const SegSample& s, int out_h, int out_w, Rng& rng, double scale_lo = 0.5,
                           double scale_hi = 2.0);
/// Flip, rescale (bilinear image, nearest labels), crop; out-of-image pixels
/// are 0 in the image and ignored in the labels.
SegSample apply_augment(const SegSample& s, const AugmentParams& p, int out_h, int out_w);
SegSample augment(const SegSample& s, int out_h, int out_w, Rng& rng);

/// Stacks samples into (N, 3, H, W) images and a flat label vector.
struct Batch {
  Tensor images;
  std::vector<int> labels;
};
Batch make_batch(std::span<const SegSample> samples, std::span<const int> indices);

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);
  /// Pixels whose label equals `ignore_index` are skipped.
  void add(std::span<const int> labels, std::span<const int> predictions, int ignore_index = kIgnoreLabel);
  void add(int truth, int prediction, int64_t count = 1);
  int64_t at(int truth, int prediction) const;
  int64_t total() const;
  int num_classes() const { return k_; }

 private:
  int k_;
  std::vector<int64_t> counts_;
};

/// Mean of TP / (TP + FP + FN) over classes that occur in the truth or the
/// predictions. Throws Error on an empty matrix.
double miou(const ConfusionMatrix& cm);

/// Per-pixel argmax over the class axis of (N, K, H, W) logits.
std::vector<int> argmax_classes(const Tensor& logits);

/// Directory layout: images/NNNN.ppm (binary P6), labels/NNNN.pgm (binary P5)
/// and manifest.json listing the train and val pairs and the class count.
/// Images are quantised to 8 bits on write.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
/// `label_map` remaps raw label values on read; unmapped values other than
/// 255 must lie in [0, K).
Dataset read_dataset(const std::filesystem::path& dir, const std::map<int, int>& label_map = {});

}  // namespace lgc
