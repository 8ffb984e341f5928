#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lgcnet/data.hpp"
#include "lgcnet/error.hpp"

namespace lgc {
namespace {

namespace fs = std::filesystem;

SyntheticSpec small_spec(int classes = 4) {
  SyntheticSpec s;
  s.train = 6;
  s.val = 2;
  s.height = 32;
  s.width = 64;
  s.num_classes = classes;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lgcnet_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Synthetic, PureFunctionOfSeed) {
  EXPECT_EQ(generate_synthetic(small_spec(), 3), generate_synthetic(small_spec(), 3));
  EXPECT_FALSE(generate_synthetic(small_spec(), 3) == generate_synthetic(small_spec(), 4));
}

TEST(Synthetic, ValuesAndLabelsInRange) {
  const Dataset d = generate_synthetic(small_spec(5), 1);
  EXPECT_EQ(d.num_classes, 5);
  EXPECT_EQ(d.train.size(), 6u);
  EXPECT_EQ(d.val.size(), 2u);
  for (const auto& s : d.train) {
    ASSERT_EQ(s.image.size(), 3u * 32 * 64);
    for (double v : s.image) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (int l : s.label) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, 5);
    }
  }
}

TEST(Synthetic, TwoClassesLinearlySeparableWithoutNoise) {
  // Background channels are drawn from [0.05, 0.25], shapes from [0.5, 1].
  SyntheticSpec spec = small_spec(2);
  spec.noise = 0.0;
  const Dataset d = generate_synthetic(spec, 9);
  for (const auto& s : d.train) {
    const size_t hw = s.label.size();
    for (size_t i = 0; i < hw; ++i) {
      const double brightness = s.image[i] + s.image[hw + i] + s.image[2 * hw + i];
      EXPECT_EQ(brightness > 1.125 ? 1 : 0, s.label[i]);
    }
  }
}

TEST(Synthetic, EveryClassReasonablyFrequent) {
  for (int k = 2; k <= 6; ++k) {
    SyntheticSpec spec;
    spec.num_classes = k;
    spec.train = 32;
    spec.val = 0;
    const Dataset d = generate_synthetic(spec, 11);
    std::vector<double> freq(static_cast<size_t>(k), 0.0);
    double total = 0.0;
    for (const auto& s : d.train)
      for (int l : s.label) {
        freq[static_cast<size_t>(l)] += 1.0;
        total += 1.0;
      }
    for (int c = 0; c < k; ++c) EXPECT_GE(freq[size_t(c)] / total, 0.01) << "K=" << k << " class " << c;
  }
}

TEST(Synthetic, RejectsClassCountOutsideRange) {
  EXPECT_THROW(generate_synthetic(small_spec(1), 0), ConfigError);
  EXPECT_THROW(generate_synthetic(small_spec(7), 0), ConfigError);
}

TEST(Miou, HandExamples) {
  ConfusionMatrix cm(3);
  // class 0: tp 3, fn 1 (as 1); class 1: tp 2, fp 1; class 2 absent everywhere
  cm.add(0, 0, 3);
  cm.add(0, 1, 1);
  cm.add(1, 1, 2);
  EXPECT_DOUBLE_EQ(miou(cm), (3.0 / 4.0 + 2.0 / 3.0) / 2.0);

  ConfusionMatrix perfect(2);
  perfect.add(std::vector<int>{0, 1, 1, 255}, std::vector<int>{0, 1, 1, 0});
  EXPECT_EQ(perfect.total(), 3);
  EXPECT_DOUBLE_EQ(miou(perfect), 1.0);

  ConfusionMatrix wrong(2);
  wrong.add(std::vector<int>{0, 0}, std::vector<int>{1, 1});
  EXPECT_DOUBLE_EQ(miou(wrong), 0.0);  // both classes occur, neither has a hit
}

TEST(Miou, PredictedOnlyClassCounts) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 1);
  cm.add(0, 2, 1);
  // class 0: 1 / 2; class 2: 0 / 1; class 1 excluded
  EXPECT_DOUBLE_EQ(miou(cm), 0.25);
}

TEST(Miou, EmptyMatrixThrows) {
  EXPECT_THROW(miou(ConfusionMatrix(4)), Error);
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.add(2, 0), Error);
  EXPECT_THROW(cm.add(std::vector<int>{0}, std::vector<int>{0, 1}), ShapeError);
}

TEST(ArgmaxClasses, LowestIndexOnTies) {
  const Tensor logits = Tensor::from({1, 3, 1, 2}, {1.0, 0.0, 1.0, 5.0, 0.5, 5.0});
  EXPECT_EQ(argmax_classes(logits), (std::vector<int>{0, 1}));
}

TEST(Augment, IdentityParamsReturnInput) {
  const Dataset d = generate_synthetic(small_spec(), 2);
  const SegSample& s = d.train[0];
  EXPECT_EQ(apply_augment(s, {}, s.height, s.width), s);
}

TEST(Augment, FlipIsAnInvolution) {
  const Dataset d = generate_synthetic(small_spec(), 2);
  const SegSample& s = d.train[1];
  AugmentParams flip;
  flip.flip = true;
  const SegSample once = apply_augment(s, flip, s.height, s.width);
  EXPECT_FALSE(once == s);
  EXPECT_EQ(once.label[0], s.label[size_t(s.width - 1)]);
  EXPECT_EQ(apply_augment(once, flip, s.height, s.width), s);
}

TEST(Augment, CropOutsideImageIsIgnored) {
  const Dataset d = generate_synthetic(small_spec(), 2);
  const SegSample& s = d.train[0];
  AugmentParams p;
  p.crop_y = -4;
  p.crop_x = -8;
  const SegSample out = apply_augment(s, p, s.height, s.width);
  EXPECT_EQ(out.label[0], kIgnoreLabel);
  EXPECT_EQ(out.image[0], 0.0);
  EXPECT_EQ(out.label[size_t(4 * s.width + 8)], s.label[0]);
}

TEST(Augment, RandomDrawsKeepOutputSize) {
  const Dataset d = generate_synthetic(small_spec(), 2);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const SegSample out = augment(d.train[size_t(i % 6)], 32, 64, rng);
    EXPECT_EQ(out.height, 32);
    EXPECT_EQ(out.width, 64);
    EXPECT_EQ(out.label.size(), 32u * 64);
    for (int l : out.label) EXPECT_TRUE(l == kIgnoreLabel || (l >= 0 && l < 4));
  }
}

TEST(Batch, StacksImagesAndLabels) {
  const Dataset d = generate_synthetic(small_spec(), 2);
  const std::vector<int> idx{2, 0};
  const Batch b = make_batch(d.train, idx);
  EXPECT_EQ(b.images.shape(), (std::vector<int64_t>{2, 3, 32, 64}));
  EXPECT_EQ(b.labels.size(), 2u * 32 * 64);
  EXPECT_EQ(b.images[0], d.train[2].image[0]);
  EXPECT_EQ(b.images[3 * 32 * 64], d.train[0].image[0]);
  EXPECT_EQ(b.labels[32 * 64], d.train[0].label[0]);
}

TEST(DatasetDirectory, RoundTripQuantisesImagesOnly) {
  const Dataset d = generate_synthetic(small_spec(), 4);
  const fs::path dir = scratch_dir("roundtrip");
  write_dataset(dir, d);
  const Dataset back = read_dataset(dir);
  EXPECT_EQ(back.num_classes, d.num_classes);
  ASSERT_EQ(back.train.size(), d.train.size());
  ASSERT_EQ(back.val.size(), d.val.size());
  for (size_t i = 0; i < d.train.size(); ++i) {
    EXPECT_EQ(back.train[i].label, d.train[i].label);
    for (size_t j = 0; j < d.train[i].image.size(); ++j)
      EXPECT_NEAR(back.train[i].image[j], d.train[i].image[j], 0.5 / 255.0 + 1e-12);
  }
  // A second write of the read-back data is exact.
  const fs::path again = scratch_dir("roundtrip2");
  write_dataset(again, back);
  EXPECT_EQ(read_dataset(again), back);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(DatasetDirectory, LabelMapRemapsAndValidates) {
  const Dataset d = generate_synthetic(small_spec(3), 4);
  const fs::path dir = scratch_dir("labelmap");
  write_dataset(dir, d);
  const Dataset swapped = read_dataset(dir, {{1, 2}, {2, 1}});
  for (size_t i = 0; i < d.train[0].label.size(); ++i) {
    const int l = d.train[0].label[i];
    EXPECT_EQ(swapped.train[0].label[i], l == 0 ? 0 : 3 - l);
  }
  EXPECT_THROW(read_dataset(dir, {{2, 9}}), ParseError);
  const Dataset ignored = read_dataset(dir, {{2, kIgnoreLabel}});
  for (int l : ignored.train[0].label) EXPECT_NE(l, 2);
  fs::remove_all(dir);
}

TEST(DatasetDirectory, MissingOrBrokenManifest) {
  const fs::path dir = scratch_dir("broken");
  EXPECT_THROW(read_dataset(dir), Error);
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << "{\"train\": []}";
  EXPECT_THROW(read_dataset(dir), ParseError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace lgc
