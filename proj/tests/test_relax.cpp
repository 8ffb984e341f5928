#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lgcnet/arch.hpp"
#include "lgcnet/error.hpp"
#include "lgcnet/relax.hpp"

namespace lgc {
namespace {

using testing::grad_check;
using testing::random_tensor;

TEST(Gumbel, KnownTransforms) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-std::exp(1.0))), -1.0, 1e-14);
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  Rng rng(1);
  Tensor g = sample_gumbel(1000, 1000, rng);
  double s = 0.0;
  for (double v : g.data()) s += v;
  EXPECT_NEAR(s / 1e6, 0.5772156649, 0.005);
}

TEST(GumbelSoftmax, EqualAlphaNoNoiseIsUniform) {
  Tensor a = Tensor::full({2, 4}, 0.3);
  Tensor z = gumbel_softmax(a, Tensor::zeros({2, 4}), 0.37);
  for (double v : z.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(GumbelSoftmax, LowTemperatureSaturates) {
  Tensor a = Tensor::from({1, 3}, {2.0, 1.0, 1.0});
  Tensor z = gumbel_softmax(a, Tensor::zeros({1, 3}), 1e-4);
  EXPECT_NEAR(z[0], 1.0, 1e-6);
  EXPECT_NEAR(z[1], 0.0, 1e-6);
}

TEST(GumbelSoftmax, RowsStochasticAtEveryTemperature) {
  Rng rng(3);
  Tensor a = random_tensor({5, 8}, rng, 0.1, 2.0, false);
  for (double lambda : {10.0, 1.0, 0.1, 0.03, 0.001}) {
    Tensor z = gumbel_softmax(a, sample_gumbel(5, 8, rng), lambda);
    for (int r = 0; r < 5; ++r) {
      double s = 0.0;
      for (int c = 0; c < 8; ++c) {
        EXPECT_GE(z.at(r, c), 0.0);
        s += z.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GumbelSoftmax, LowerTemperatureSharpensOnAverage) {
  Rng rng(4);
  Tensor a = random_tensor({5, 8}, rng, 0.1, 2.0, false);
  double hot = 0.0, cold = 0.0;
  for (int i = 0; i < 200; ++i) {
    Tensor g = sample_gumbel(5, 8, rng);
    Tensor zh = gumbel_softmax(a, g, 1.0), zc = gumbel_softmax(a, g, 0.3);
    for (int r = 0; r < 5; ++r) {
      double mh = 0.0, mc = 0.0;
      for (int c = 0; c < 8; ++c) {
        mh = std::max(mh, zh.at(r, c));
        mc = std::max(mc, zc.at(r, c));
      }
      hot += mh;
      cold += mc;
    }
  }
  EXPECT_GT(cold, hot);
}

TEST(GumbelSoftmax, RejectsBadInput) {
  Tensor a = Tensor::full({2, 3}, 1.0);
  EXPECT_THROW(gumbel_softmax(a, Tensor::zeros({2, 3}), 0.0), Error);
  EXPECT_THROW(gumbel_softmax(a, Tensor::zeros({3, 2}), 1.0), ShapeError);
}

TEST(GumbelSoftmax, FiniteDifferencesWrtAlpha) {
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    Tensor noise = sample_gumbel(5, 8, rng);
    const double lambda = rng.uniform(0.3, 2.0);
    auto fn = [&](const std::vector<Tensor>& v) { return gumbel_softmax(v[0], noise, lambda); };
    EXPECT_LT(grad_check(fn, {random_tensor({5, 8}, rng, 0.2, 3.0)}, rng), 1e-4);
  }
}

TEST(GumbelSoftmax, GumbelMaxFrequencies) {
  Rng rng(6);
  Tensor a = random_tensor({5, 8}, rng, 0.05, 1.0, false);
  Tensor p = ops::softmax_rows(ops::log(a));
  std::vector<int> counts(40, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto chosen = row_argmax(gumbel_softmax(a, sample_gumbel(5, 8, rng), 0.01));
    for (int r = 0; r < 5; ++r) ++counts[static_cast<size_t>(r * 8 + chosen[static_cast<size_t>(r)])];
  }
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(counts[static_cast<size_t>(i)] / double(draws), p[i], 0.01) << i;
}

TEST(Temperature, Endpoints) {
  TemperatureSchedule s{1.0, 0.03, 2000};
  EXPECT_DOUBLE_EQ(temperature_at(0, s), 1.0);
  EXPECT_NEAR(temperature_at(2000, s), 0.03, 1e-15);
  EXPECT_NEAR(temperature_at(1000, s), std::sqrt(0.03), 1e-12);
  EXPECT_NEAR(temperature_at(5000, s), 0.03, 1e-15);
}

TEST(Temperature, NonIncreasing) {
  TemperatureSchedule s{1.0, 0.03, 300};
  for (long t = 1; t <= 300; ++t) EXPECT_LE(temperature_at(t, s), temperature_at(t - 1, s));
}

TEST(Temperature, RejectsBadSchedule) {
  EXPECT_THROW(temperature_at(0, {1.0, 0.03, 0}), ConfigError);
  EXPECT_THROW(temperature_at(0, {0.01, 0.03, 10}), ConfigError);
}

}  // namespace
}  // namespace lgc
