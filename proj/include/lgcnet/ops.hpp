#pragma once

#include <span>
#include <vector>

#include "lgcnet/tensor.hpp"

/// Differentiable operations. Every op records itself on the active tape when
/// gradients are enabled and at least one input requires a gradient.
///
/// Image tensors are laid out (N, C, H, W); matrices are (rows, cols).
namespace lgc::ops {

// ---- elementwise / reductions ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Sum of same-shaped tensors, accumulated left to right from zero.
Tensor add_n(const std::vector<Tensor>& terms);
/// a + c where c is a constant buffer (no gradient), e.g. Gumbel noise.
Tensor add_const(const Tensor& a, std::span<const double> c);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sum(const Tensor& x);
/// Sum of x ⊙ w for a constant weight buffer w.
Tensor dot_const(const Tensor& x, std::span<const double> w);
Tensor reshape(const Tensor& x, Shape shape);

// ---- matrices --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Adds a length-cols bias to every row.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
/// Row-wise softmax with max subtraction. When widths is non-empty, row r is
/// normalised over its first widths[r] columns and the rest are exactly zero.
Tensor softmax_rows(const Tensor& x, std::span<const int> widths = {});
/// Softmax along axis 0 (columns) or 1 (rows) of a matrix.
Tensor softmax(const Tensor& x, int axis);

// ---- feature maps ----------------------------------------------------------

/// weight (Co, Ci, k, k), no bias.
Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad, int dilation);
/// weight (C, 1, k, k).
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, int stride, int pad, int dilation);
/// Kernel-2, stride-2 transposed convolution; weight (Ci, Co, 2, 2).
Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight);
/// Adds a per-channel bias (C) to an (N, C, H, W) tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

/// Per-channel batch normalisation. Training mode normalises with batch
/// statistics and updates the running estimates; eval mode uses them.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

/// 3x3 max pooling, padding 1.
Tensor max_pool3x3(const Tensor& x, int stride);
Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w);
/// Bilinear resampling with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor concat_channels(const std::vector<Tensor>& parts);

/// Σ_m mask(row, m) · terms[m]. Undefined terms contribute zero.
Tensor mixture(const Tensor& mask, int row, const std::vector<Tensor>& terms);

/// Mean pixel-wise negative log-likelihood over labels != ignore_index.
/// Returns 0 (with zero gradient) when every pixel is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_index = 255);

}  // namespace lgc::ops
