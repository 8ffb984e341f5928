#pragma once

#include <span>

#include "lgcnet/rng.hpp"
#include "lgcnet/tensor.hpp"

namespace lgc {

/// Exponential decay from `initial` to `minimum` over `total_steps`.
struct TemperatureSchedule {
  double initial = 1.0;
  double minimum = 0.03;
  long total_steps = 1;
};

/// λ(t) = initial · (minimum / initial)^(t / T), clamped at `minimum`.
double temperature_at(long step, const TemperatureSchedule& schedule);

/// -log(-log u) with u clamped to [1e-12, 1 - 1e-12].
double gumbel_from_uniform(double u);

/// Matrix of i.i.d. standard Gumbel draws (no gradient).
Tensor sample_gumbel(int rows, int cols, Rng& rng);

/// Row-wise softmax((log α + G) / λ). `alpha` must be positive.
Tensor gumbel_softmax(const Tensor& alpha, const Tensor& noise, double temperature, std::span<const int> widths = {});

/// Same relaxation from logits θ = log α, which is how ArchParams are stored.
Tensor gumbel_softmax_logits(const Tensor& logits, const Tensor& noise, double temperature,
                             std::span<const int> widths = {});

}  // namespace lgc
