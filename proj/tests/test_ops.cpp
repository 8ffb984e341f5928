#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lgcnet/error.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {
namespace {

using testing::grad_check;
using testing::random_tensor;

constexpr double kTol = 1e-4;
constexpr int kInstances = 5;

TEST(Tensor, HandleSharesStorageCloneDoesNot) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 5.0;
  EXPECT_EQ(a[0], 5.0);
  EXPECT_EQ(c[0], 1.0);
}

TEST(Tensor, FromRejectsWrongCount) { EXPECT_THROW(Tensor::from({2, 2}, {1.0}), ShapeError); }

TEST(Tensor, BackwardAccumulatesThroughSharedInput) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = ops::mul(x, x);
  backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tensor, NoGradGuardSuppressesRecording) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  active_tape().clear();
  {
    NoGradGuard g;
    Tensor y = ops::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(active_tape().size(), 0u);
}

TEST(Ops, SoftmaxRowsKnownValues) {
  Tensor x = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
  Tensor y = ops::softmax_rows(x);
  EXPECT_NEAR(y[0], 0.09003057317038046, 1e-15);
  EXPECT_NEAR(y[1], 0.24472847105479767, 1e-15);
  EXPECT_NEAR(y[2], 0.6652409557748219, 1e-15);
}

TEST(Ops, SoftmaxRowsIsShiftInvariantAndStable) {
  Tensor x = Tensor::from({1, 2}, {1000.0, 1000.0});
  Tensor y = ops::softmax_rows(x);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Ops, SoftmaxRowsWidthsZeroThePadding) {
  Tensor x = Tensor::from({2, 3}, {0.0, 0.0, 0.0, 5.0, 5.0, 9.0});
  const int widths[] = {3, 2};
  Tensor y = ops::softmax_rows(x, widths);
  EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(y[3], 0.5);
  EXPECT_DOUBLE_EQ(y[5], 0.0);
}

TEST(Ops, SoftmaxAxisZeroNormalisesColumns) {
  Tensor x = Tensor::from({2, 2}, {0.0, 1.0, 0.0, 3.0});
  Tensor y = ops::softmax(x, 0);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1] + y[3], 1.0, 1e-15);
}

TEST(Ops, CrossEntropyUniformIsLogK) {
  Tensor logits = Tensor::zeros({1, 4, 1, 2});
  const int labels[] = {0, 3};
  EXPECT_NEAR(ops::cross_entropy(logits, labels).item(), std::log(4.0), 1e-15);
}

TEST(Ops, CrossEntropyIgnoresLabel) {
  Tensor logits = Tensor::from({1, 2, 1, 2}, {0.0, 5.0, std::log(3.0), -5.0});
  const int labels[] = {1, 255};
  // p(1) = 3 / (1 + 3) at the first pixel
  EXPECT_NEAR(ops::cross_entropy(logits, labels).item(), -std::log(0.75), 1e-15);
  const int none[] = {255, 255};
  EXPECT_EQ(ops::cross_entropy(logits, none).item(), 0.0);
}

TEST(Ops, Conv2dHandExample) {
  // 1 channel 3x3 input, all-ones 3x3 kernel, padding 1: centre sums everything.
  Tensor x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = ops::conv2d(x, w, 1, 1, 1);
  EXPECT_DOUBLE_EQ(y[4], 45.0);
  EXPECT_DOUBLE_EQ(y[0], 1 + 2 + 4 + 5);
  Tensor s = ops::conv2d(x, w, 2, 1, 1);
  EXPECT_EQ(s.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(s[3], 5 + 6 + 8 + 9);
}

TEST(Ops, DilatedDepthwiseMatchesDirectSum) {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 9, 11}, rng, -1, 1, false);
  Tensor w = random_tensor({3, 1, 3, 3}, rng, -1, 1, false);
  const int d = 2, stride = 2;
  Tensor y = ops::depthwise_conv2d(x, w, stride, d, d);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5, 6}));
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) {
          double acc = 0.0;
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int ih = i * stride - d + ki * d, iw = j * stride - d + kj * d;
              if (ih < 0 || ih >= 9 || iw < 0 || iw >= 11) continue;
              acc += w[c * 9 + ki * 3 + kj] * x[((b * 3 + c) * 9 + ih) * 11 + iw];
            }
          EXPECT_NEAR(y[((b * 3 + c) * 5 + i) * 6 + j], acc, 1e-12);
        }
}

TEST(Ops, ResizeBilinearHalfPixel) {
  Tensor x = Tensor::from({1, 1, 1, 2}, {1.0, 3.0});
  Tensor y = ops::resize_bilinear(x, 1, 4);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.5);
  EXPECT_DOUBLE_EQ(y[2], 2.5);
  EXPECT_DOUBLE_EQ(y[3], 3.0);
}

TEST(Ops, MaxPoolAndAdaptivePool) {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, -2, 3, 0});
  Tensor m = ops::max_pool3x3(x, 1);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(m[i], 3.0);
  Tensor g = ops::adaptive_avg_pool(x, 1, 1);
  EXPECT_DOUBLE_EQ(g.item(), 0.5);
}

TEST(Ops, BatchNormNormalisesPerChannel) {
  Rng rng(5);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, -3, 7, false);
  ops::BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  Tensor y = ops::batch_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), st, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0.0, ss = 0.0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 9; ++i) {
        const double v = y[(b * 2 + c) * 9 + i];
        s += v;
        ss += v * v;
      }
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(ss / 36, 1.0, 1e-3);
  }
  EXPECT_NE(st.running_mean[0], 0.0);
}

TEST(Ops, MixtureOneHotIsExactCopy) {
  Rng rng(9);
  Tensor a = random_tensor({1, 2, 3, 3}, rng, -1, 1, false);
  Tensor b = random_tensor({1, 2, 3, 3}, rng, -1, 1, false);
  Tensor mask = Tensor::from({1, 3}, {0.0, 1.0, 0.0});
  Tensor y = ops::mixture(mask, 0, {a, b, Tensor()});
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], b[i]);
}

TEST(Ops, NonFiniteRaisesNumericError) {
  Tensor x = Tensor::from({1}, {-1.0});
  EXPECT_THROW(ops::log(x), NumericError);
}

TEST(Ops, ShapeMismatchRaises) {
  EXPECT_THROW(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Ops, LinearityOfConv) {
  Rng rng(11);
  Tensor x = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
  Tensor x2 = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
  Tensor lhs = ops::conv2d(ops::add(ops::scale(x, 2.0), x2), w, 1, 1, 1);
  Tensor rhs = ops::add(ops::scale(ops::conv2d(x, w, 1, 1, 1), 2.0), ops::conv2d(x2, w, 1, 1, 1));
  for (int64_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
}

// ---- finite differences ---------------------------------------------------------

struct GradCase {
  const char* name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  testing::Fn fn;
};

std::vector<GradCase> grad_cases() {
  using V = std::vector<Tensor>;
  auto r = [](Shape s, Rng& g, double lo = -1, double hi = 1) { return random_tensor(std::move(s), g, lo, hi); };
  return {
      {"add", [=](Rng& g) { return V{r({3, 4}, g), r({3, 4}, g)}; }, [](const V& v) { return ops::add(v[0], v[1]); }},
      {"sub", [=](Rng& g) { return V{r({3, 4}, g), r({3, 4}, g)}; }, [](const V& v) { return ops::sub(v[0], v[1]); }},
      {"mul", [=](Rng& g) { return V{r({3, 4}, g), r({3, 4}, g)}; }, [](const V& v) { return ops::mul(v[0], v[1]); }},
      {"scale", [=](Rng& g) { return V{r({5}, g)}; }, [](const V& v) { return ops::scale(v[0], -1.7); }},
      {"add_scalar", [=](Rng& g) { return V{r({5}, g)}; }, [](const V& v) { return ops::add_scalar(v[0], 0.3); }},
      {"add_n", [=](Rng& g) { return V{r({2, 3}, g), r({2, 3}, g), r({2, 3}, g)}; },
       [](const V& v) { return ops::add_n(v); }},
      {"add_const", [=](Rng& g) { return V{r({4}, g)}; },
       [](const V& v) { return ops::add_const(v[0], std::vector<double>{1, 2, 3, 4}); }},
      {"relu", [=](Rng& g) { return V{r({20}, g)}; }, [](const V& v) { return ops::relu(v[0]); }},
      {"log", [=](Rng& g) { return V{r({6}, g, 0.2, 3.0)}; }, [](const V& v) { return ops::log(v[0]); }},
      {"exp", [=](Rng& g) { return V{r({6}, g)}; }, [](const V& v) { return ops::exp(v[0]); }},
      {"sum", [=](Rng& g) { return V{r({2, 5}, g)}; }, [](const V& v) { return ops::sum(v[0]); }},
      {"dot_const", [=](Rng& g) { return V{r({3}, g)}; },
       [](const V& v) { return ops::dot_const(v[0], std::vector<double>{0.5, -2, 3}); }},
      {"reshape", [=](Rng& g) { return V{r({2, 6}, g)}; }, [](const V& v) { return ops::reshape(v[0], {3, 4}); }},
      {"matmul", [=](Rng& g) { return V{r({3, 4}, g), r({4, 5}, g)}; },
       [](const V& v) { return ops::matmul(v[0], v[1]); }},
      {"transpose", [=](Rng& g) { return V{r({3, 4}, g)}; }, [](const V& v) { return ops::transpose(v[0]); }},
      {"add_row_bias", [=](Rng& g) { return V{r({3, 4}, g), r({4}, g)}; },
       [](const V& v) { return ops::add_row_bias(v[0], v[1]); }},
      {"softmax_rows", [=](Rng& g) { return V{r({4, 6}, g, -3, 3)}; },
       [](const V& v) { return ops::softmax_rows(v[0]); }},
      {"softmax_rows_widths", [=](Rng& g) { return V{r({3, 5}, g, -3, 3)}; },
       [](const V& v) {
         static const int w[] = {5, 2, 3};
         return ops::softmax_rows(v[0], w);
       }},
      {"softmax_cols", [=](Rng& g) { return V{r({4, 3}, g, -3, 3)}; },
       [](const V& v) { return ops::softmax(v[0], 0); }},
      {"conv2d", [=](Rng& g) { return V{r({2, 3, 6, 7}, g), r({4, 3, 3, 3}, g)}; },
       [](const V& v) { return ops::conv2d(v[0], v[1], 1, 1, 1); }},
      {"conv2d_stride2", [=](Rng& g) { return V{r({2, 3, 6, 8}, g), r({2, 3, 3, 3}, g)}; },
       [](const V& v) { return ops::conv2d(v[0], v[1], 2, 1, 1); }},
      {"conv2d_1x1", [=](Rng& g) { return V{r({2, 3, 4, 4}, g), r({5, 3, 1, 1}, g)}; },
       [](const V& v) { return ops::conv2d(v[0], v[1], 1, 0, 1); }},
      {"depthwise", [=](Rng& g) { return V{r({2, 3, 7, 6}, g), r({3, 1, 3, 3}, g)}; },
       [](const V& v) { return ops::depthwise_conv2d(v[0], v[1], 1, 1, 1); }},
      {"depthwise_dilated_stride2", [=](Rng& g) { return V{r({2, 2, 8, 10}, g), r({2, 1, 3, 3}, g)}; },
       [](const V& v) { return ops::depthwise_conv2d(v[0], v[1], 2, 4, 4); }},
      {"conv_transpose", [=](Rng& g) { return V{r({2, 3, 3, 4}, g), r({3, 2, 2, 2}, g)}; },
       [](const V& v) { return ops::conv_transpose2x2(v[0], v[1]); }},
      {"add_channel_bias", [=](Rng& g) { return V{r({2, 3, 2, 2}, g), r({3}, g)}; },
       [](const V& v) { return ops::add_channel_bias(v[0], v[1]); }},
      {"batch_norm", [=](Rng& g) { return V{r({3, 2, 3, 3}, g), r({2}, g, 0.5, 1.5), r({2}, g)}; },
       [](const V& v) {
         ops::BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
         return ops::batch_norm(v[0], v[1], v[2], st, true);
       }},
      {"batch_norm_eval", [=](Rng& g) { return V{r({2, 2, 3, 3}, g), r({2}, g, 0.5, 1.5), r({2}, g)}; },
       [](const V& v) {
         ops::BatchNormState st{Tensor::from({2}, {0.1, -0.2}), Tensor::from({2}, {0.7, 1.3})};
         return ops::batch_norm(v[0], v[1], v[2], st, false);
       }},
      {"max_pool", [=](Rng& g) { return V{r({2, 2, 6, 6}, g)}; }, [](const V& v) { return ops::max_pool3x3(v[0], 1); }},
      {"max_pool_stride2", [=](Rng& g) { return V{r({1, 2, 6, 8}, g)}; },
       [](const V& v) { return ops::max_pool3x3(v[0], 2); }},
      {"adaptive_avg_pool", [=](Rng& g) { return V{r({2, 2, 7, 9}, g)}; },
       [](const V& v) { return ops::adaptive_avg_pool(v[0], 2, 5); }},
      {"resize_up", [=](Rng& g) { return V{r({1, 2, 3, 4}, g)}; },
       [](const V& v) { return ops::resize_bilinear(v[0], 6, 8); }},
      {"resize_down", [=](Rng& g) { return V{r({1, 2, 8, 8}, g)}; },
       [](const V& v) { return ops::resize_bilinear(v[0], 3, 5); }},
      {"concat", [=](Rng& g) { return V{r({2, 1, 2, 3}, g), r({2, 3, 2, 3}, g)}; },
       [](const V& v) { return ops::concat_channels(v); }},
      {"mixture", [=](Rng& g) { return V{r({2, 3}, g), r({1, 2, 2, 2}, g), r({1, 2, 2, 2}, g)}; },
       [](const V& v) { return ops::mixture(v[0], 1, {v[1], v[2], Tensor()}); }},
      {"cross_entropy", [=](Rng& g) { return V{r({2, 3, 2, 3}, g, -2, 2)}; },
       [](const V& v) {
         static const int labels[] = {0, 1, 2, 255, 1, 1, 2, 0, 0, 255, 2, 1};
         return ops::cross_entropy(v[0], labels);
       }},
  };
}

TEST(GradCheck, EveryPrimitiveOp) {
  Rng rng(2024);
  for (const auto& c : grad_cases()) {
    for (int i = 0; i < kInstances; ++i) {
      const double err = grad_check(c.fn, c.inputs(rng), rng);
      EXPECT_LT(err, kTol) << c.name << " instance " << i;
    }
  }
}

TEST(GradCheck, EveryCandidateOperation) {
  Rng rng(77);
  struct Case {
    Primitive p;
    int stride;
    int c_in, c_out;
  };
  const Case cases[] = {
      {Primitive::kMaxPool3x3, 1, 3, 3},       {Primitive::kSkip, 1, 3, 3},
      {Primitive::kSkip, 2, 3, 4},             {Primitive::kConv3x3, 2, 3, 4},
      {Primitive::kSepConv3x3, 1, 3, 4},       {Primitive::kDilSepConv3x3D2, 2, 3, 3},
      {Primitive::kDilSepConv3x3D8, 1, 2, 3},  {Primitive::kDilSepConv3x3D12, 1, 2, 2},
      {Primitive::kConv1x1, 1, 3, 2},          {Primitive::kGlobalPool2, 1, 3, 2},
      {Primitive::kGlobalPool5, 1, 2, 2},      {Primitive::kTransposedConvX2, 1, 3, 2},
      {Primitive::kBilinearUpX2, 1, 2, 2},
  };
  for (const auto& c : cases) {
    for (int i = 0; i < kInstances; ++i) {
      OpWeights w = make_op_weights(c.p, c.c_in, c.c_out, c.stride, rng);
      std::vector<Tensor> inputs{random_tensor({2, c.c_in, 6, 8}, rng)};
      for (auto& t : w.params) inputs.push_back(t);
      const auto fn = [&](const std::vector<Tensor>&) {
        return apply_primitive(c.p, inputs[0], w.params.empty() ? nullptr : &w, c.stride, c.c_out, true);
      };
      EXPECT_LT(grad_check(fn, inputs, rng), kTol) << primitive_name(c.p) << " stride " << c.stride;
    }
  }
}

}  // namespace
}  // namespace lgc
