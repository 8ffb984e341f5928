#include "lgcnet/primitives.hpp"

#include <array>
#include <cmath>

#include "lgcnet/error.hpp"

namespace lgc {
namespace {

constexpr std::array<std::string_view, kPrimitiveCount> kNames = {
    "max_pool_3x3",     "skip_connect",     "conv_3x3",          "zero",
    "sep_conv_3x3",     "dil_sep_conv_3x3_d2", "dil_sep_conv_3x3_d4", "dil_sep_conv_3x3_d8",
    "dil_sep_conv_3x3_d12", "conv_1x1",     "global_pool_1",     "global_pool_2",
    "global_pool_5",    "transposed_conv_x2", "bilinear_up_x2",
};

constexpr std::array<Primitive, 8> kBackbone = {
    Primitive::kMaxPool3x3,      Primitive::kSkip,           Primitive::kConv3x3,
    Primitive::kZero,            Primitive::kSepConv3x3,     Primitive::kDilSepConv3x3D2,
    Primitive::kDilSepConv3x3D4, Primitive::kDilSepConv3x3D8,
};

constexpr std::array<Primitive, 10> kFusion = {
    Primitive::kConv1x1,         Primitive::kConv3x3,          Primitive::kSepConv3x3,
    Primitive::kDilSepConv3x3D2, Primitive::kDilSepConv3x3D4,  Primitive::kDilSepConv3x3D8,
    Primitive::kDilSepConv3x3D12, Primitive::kGlobalPool1,     Primitive::kGlobalPool2,
    Primitive::kGlobalPool5,
};

constexpr std::array<Primitive, 2> kUp = {Primitive::kTransposedConvX2, Primitive::kBilinearUpX2};

Tensor bn_params(int c, double value) { return Tensor::full({c}, value, true); }

void add_bn(OpWeights& w, int c) {
  w.params.push_back(bn_params(c, 1.0));
  w.params.push_back(bn_params(c, 0.0));
  w.bn.running_mean = Tensor::zeros({c});
  w.bn.running_var = Tensor::full({c}, 1.0);
}

void expect_params(const OpWeights* w, size_t n, Primitive p) {
  if (w == nullptr) throw Error("missing weights for parametric op " + std::string(primitive_name(p)));
  if (w->params.size() != n)
    throw Error("weights for " + std::string(primitive_name(p)) + " have " + std::to_string(w->params.size()) +
                " tensors, expected " + std::to_string(n));
}

}  // namespace

std::string_view primitive_name(Primitive p) { return kNames.at(static_cast<size_t>(p)); }

std::optional<Primitive> primitive_from_name(std::string_view name) {
  for (size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<Primitive>(i);
  return std::nullopt;
}

std::span<const Primitive> backbone_candidates() { return kBackbone; }
std::span<const Primitive> fusion_candidates() { return kFusion; }
std::span<const Primitive> upsample_candidates() { return kUp; }

int primitive_dilation(Primitive p) {
  switch (p) {
    case Primitive::kSepConv3x3: return 1;
    case Primitive::kDilSepConv3x3D2: return 2;
    case Primitive::kDilSepConv3x3D4: return 4;
    case Primitive::kDilSepConv3x3D8: return 8;
    case Primitive::kDilSepConv3x3D12: return 12;
    default: return 0;
  }
}

int primitive_pool_size(Primitive p) {
  switch (p) {
    case Primitive::kGlobalPool1: return 1;
    case Primitive::kGlobalPool2: return 2;
    case Primitive::kGlobalPool5: return 5;
    default: return 0;
  }
}

bool is_upsampling(Primitive p) { return p == Primitive::kTransposedConvX2 || p == Primitive::kBilinearUpX2; }

bool is_parametric(Primitive p, int stride) {
  switch (p) {
    case Primitive::kMaxPool3x3:
    case Primitive::kZero:
    case Primitive::kBilinearUpX2: return false;
    case Primitive::kSkip: return stride == 2;
    default: return true;
  }
}

bool is_lightweight(Primitive p) {
  return p == Primitive::kZero || p == Primitive::kSkip || p == Primitive::kMaxPool3x3;
}

Tensor kaiming_weight(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor w = Tensor::zeros(std::move(shape), true);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.data()) v = rng.normal(0.0, sd);
  return w;
}

OpWeights make_op_weights(Primitive p, int c_in, int c_out, int stride, Rng& rng) {
  OpWeights w;
  if (!is_parametric(p, stride)) return w;
  switch (p) {
    case Primitive::kConv3x3:
      w.params.push_back(kaiming_weight({c_out, c_in, 3, 3}, c_in * 9, rng));
      add_bn(w, c_out);
      break;
    case Primitive::kConv1x1:
    case Primitive::kSkip:
      w.params.push_back(kaiming_weight({c_out, c_in, 1, 1}, c_in, rng));
      add_bn(w, c_out);
      break;
    case Primitive::kSepConv3x3:
    case Primitive::kDilSepConv3x3D2:
    case Primitive::kDilSepConv3x3D4:
    case Primitive::kDilSepConv3x3D8:
    case Primitive::kDilSepConv3x3D12:
      w.params.push_back(kaiming_weight({c_in, 1, 3, 3}, 9, rng));
      w.params.push_back(kaiming_weight({c_out, c_in, 1, 1}, c_in, rng));
      add_bn(w, c_out);
      break;
    case Primitive::kGlobalPool1:
    case Primitive::kGlobalPool2:
    case Primitive::kGlobalPool5:
      w.params.push_back(kaiming_weight({c_out, c_in, 1, 1}, c_in, rng));
      break;
    case Primitive::kTransposedConvX2:
      w.params.push_back(kaiming_weight({c_in, c_out, 2, 2}, c_in, rng));
      add_bn(w, c_out);
      break;
    default: break;
  }
  return w;
}

Tensor apply_primitive(Primitive p, const Tensor& x, OpWeights* weights, int stride, int c_out, bool training) {
  if (x.rank() != 4) throw ShapeError("apply_primitive: expected (N,C,H,W), got " + to_string(x.shape()));
  if (stride != 1 && stride != 2) throw ShapeError("apply_primitive: stride must be 1 or 2");
  if (is_upsampling(p) && stride != 1) throw ShapeError("apply_primitive: upsampling ops take stride 1");
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % stride != 0 || w % stride != 0)
    throw ShapeError("apply_primitive: extents " + to_string(x.shape()) + " not divisible by stride " +
                     std::to_string(stride));
  const bool parametric = is_parametric(p, stride);
  if (!parametric && weights != nullptr && !weights->params.empty())
    throw Error("weights given for non-parametric op " + std::string(primitive_name(p)));

  auto same_channels = [&] {
    if (c_in != c_out)
      throw ShapeError(std::string(primitive_name(p)) + " cannot map " + std::to_string(c_in) + " channels to " +
                       std::to_string(c_out));
  };

  switch (p) {
    case Primitive::kZero: return Tensor::zeros({n, c_out, h / stride, w / stride});
    case Primitive::kMaxPool3x3: same_channels(); return ops::max_pool3x3(x, stride);
    case Primitive::kSkip:
      if (stride == 1) {
        same_channels();
        return x;
      }
      expect_params(weights, 3, p);
      return ops::batch_norm(ops::conv2d(ops::relu(x), weights->params[0], 2, 0, 1), weights->params[1],
                             weights->params[2], weights->bn, training);
    case Primitive::kConv3x3:
      expect_params(weights, 3, p);
      return ops::batch_norm(ops::conv2d(ops::relu(x), weights->params[0], stride, 1, 1), weights->params[1],
                             weights->params[2], weights->bn, training);
    case Primitive::kConv1x1:
      expect_params(weights, 3, p);
      return ops::batch_norm(ops::conv2d(ops::relu(x), weights->params[0], stride, 0, 1), weights->params[1],
                             weights->params[2], weights->bn, training);
    case Primitive::kSepConv3x3:
    case Primitive::kDilSepConv3x3D2:
    case Primitive::kDilSepConv3x3D4:
    case Primitive::kDilSepConv3x3D8:
    case Primitive::kDilSepConv3x3D12: {
      expect_params(weights, 4, p);
      const int d = primitive_dilation(p);
      Tensor y = ops::depthwise_conv2d(ops::relu(x), weights->params[0], stride, d, d);
      y = ops::conv2d(y, weights->params[1], 1, 0, 1);
      return ops::batch_norm(y, weights->params[2], weights->params[3], weights->bn, training);
    }
    case Primitive::kGlobalPool1:
    case Primitive::kGlobalPool2:
    case Primitive::kGlobalPool5: {
      expect_params(weights, 1, p);
      const int k = primitive_pool_size(p);
      Tensor y = ops::adaptive_avg_pool(ops::relu(x), k, k);
      y = ops::conv2d(y, weights->params[0], 1, 0, 1);
      return ops::resize_bilinear(y, static_cast<int>(h / stride), static_cast<int>(w / stride));
    }
    case Primitive::kTransposedConvX2:
      expect_params(weights, 3, p);
      return ops::batch_norm(ops::conv_transpose2x2(ops::relu(x), weights->params[0]), weights->params[1],
                             weights->params[2], weights->bn, training);
    case Primitive::kBilinearUpX2:
      same_channels();
      return ops::resize_bilinear(x, static_cast<int>(2 * h), static_cast<int>(2 * w));
  }
  throw Error("unknown primitive");
}

int64_t primitive_param_count(Primitive p, int c_in, int c_out, int stride) {
  const int64_t ci = c_in, co = c_out;
  switch (p) {
    case Primitive::kConv3x3: return ci * co * 9 + 2 * co;
    case Primitive::kConv1x1: return ci * co + 2 * co;
    case Primitive::kSkip: return stride == 2 ? ci * co + 2 * co : 0;
    case Primitive::kSepConv3x3:
    case Primitive::kDilSepConv3x3D2:
    case Primitive::kDilSepConv3x3D4:
    case Primitive::kDilSepConv3x3D8:
    case Primitive::kDilSepConv3x3D12: return ci * 9 + ci * co + 2 * co;
    case Primitive::kGlobalPool1:
    case Primitive::kGlobalPool2:
    case Primitive::kGlobalPool5: return ci * co;
    case Primitive::kTransposedConvX2: return ci * co * 4 + 2 * co;
    default: return 0;
  }
}

double primitive_macs(Primitive p, int c_in, int c_out, int h, int w, int stride) {
  const double ci = c_in, co = c_out;
  const double in_px = static_cast<double>(h) * w;
  const double out_px = in_px / (stride * stride);
  switch (p) {
    case Primitive::kZero: return 0.0;
    case Primitive::kMaxPool3x3: return 9.0 * ci * out_px;
    case Primitive::kSkip: return stride == 1 ? ci * in_px : ci * co * out_px;
    case Primitive::kConv3x3: return 9.0 * ci * co * out_px;
    case Primitive::kConv1x1: return ci * co * out_px;
    case Primitive::kSepConv3x3:
    case Primitive::kDilSepConv3x3D2:
    case Primitive::kDilSepConv3x3D4:
    case Primitive::kDilSepConv3x3D8:
    case Primitive::kDilSepConv3x3D12: return 9.0 * ci * out_px + ci * co * out_px;
    case Primitive::kGlobalPool1:
    case Primitive::kGlobalPool2:
    case Primitive::kGlobalPool5: {
      const double k = primitive_pool_size(p);
      return ci * in_px + ci * co * k * k + co * out_px;
    }
    case Primitive::kTransposedConvX2: return ci * co * 4.0 * in_px;
    case Primitive::kBilinearUpX2: return 4.0 * ci * 4.0 * in_px;
  }
  return 0.0;
}

}  // namespace lgc
