#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lgcnet/ops.hpp"
#include "lgcnet/rng.hpp"
#include "lgcnet/tensor.hpp"

namespace lgc {

/// Every candidate operation of the backbone cells, the fusion cell and the
/// fusion up-sampling edges.
enum class Primitive : int {
  kMaxPool3x3 = 0,
  kSkip,
  kConv3x3,
  kZero,
  kSepConv3x3,
  kDilSepConv3x3D2,
  kDilSepConv3x3D4,
  kDilSepConv3x3D8,
  kDilSepConv3x3D12,
  kConv1x1,
  kGlobalPool1,
  kGlobalPool2,
  kGlobalPool5,
  kTransposedConvX2,
  kBilinearUpX2,
};

inline constexpr int kPrimitiveCount = 15;

std::string_view primitive_name(Primitive p);
std::optional<Primitive> primitive_from_name(std::string_view name);

/// Backbone cell candidates, in op-id order.
std::span<const Primitive> backbone_candidates();
/// Fusion cell candidates for ordinary edges, in op-id order.
std::span<const Primitive> fusion_candidates();
/// Candidates for the fusion cell's Up×2 edges.
std::span<const Primitive> upsample_candidates();

/// Dilation of a separable convolution (1 for the undilated one, 0 otherwise).
int primitive_dilation(Primitive p);
/// Pooled output size of a global-pooling op, 0 otherwise.
int primitive_pool_size(Primitive p);
/// Output resolution is twice the input resolution.
bool is_upsampling(Primitive p);
bool is_parametric(Primitive p, int stride);
/// zero, skip and max pooling.
bool is_lightweight(Primitive p);

/// Weights of one op instance. Parameter layout by kind:
///   conv3x3 / conv1x1 / skip(stride 2) / transposed: {weight, gamma, beta}
///   separable:                                      {depthwise, pointwise, gamma, beta}
///   global pooling:                                 {weight}
struct OpWeights {
  std::vector<Tensor> params;
  ops::BatchNormState bn;
};

OpWeights make_op_weights(Primitive p, int c_in, int c_out, int stride, Rng& rng);

/// Applies a candidate op. Parametric ops run ReLU -> convolution -> batch
/// norm; global pooling runs ReLU -> pool -> 1x1 conv -> bilinear upsample.
/// `weights` must be non-null exactly when the op is parametric.
Tensor apply_primitive(Primitive p, const Tensor& x, OpWeights* weights, int stride, int c_out, bool training);

int64_t primitive_param_count(Primitive p, int c_in, int c_out, int stride);

/// Multiply-accumulate count (or MAC-equivalent data movement for pooling,
/// identity and interpolation) for one sample at the given input extent.
double primitive_macs(Primitive p, int c_in, int c_out, int h, int w, int stride);

/// He-normal initialised (Co, Ci, k, k) weight.
Tensor kaiming_weight(Shape shape, int64_t fan_in, Rng& rng);

}  // namespace lgc
