#include "lgcnet/relax.hpp"

#include <algorithm>
#include <cmath>

#include "lgcnet/error.hpp"
#include "lgcnet/ops.hpp"

namespace lgc {

double temperature_at(long step, const TemperatureSchedule& s) {
  if (s.total_steps <= 0 || step < 0) throw ConfigError("temperature_at: step must lie in [0, total_steps]");
  if (s.initial <= 0.0 || s.minimum <= 0.0 || s.minimum > s.initial)
    throw ConfigError("temperature schedule needs 0 < minimum <= initial");
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.total_steps));
  return std::max(s.minimum, s.initial * std::pow(s.minimum / s.initial, frac));
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-12, 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

Tensor sample_gumbel(int rows, int cols, Rng& rng) {
  Tensor g = Tensor::zeros({rows, cols});
  for (double& v : g.data()) v = gumbel_from_uniform(rng.uniform());
  return g;
}

Tensor gumbel_softmax_logits(const Tensor& logits, const Tensor& noise, double temperature, std::span<const int> widths) {
  if (!(temperature > 0.0)) throw Error("gumbel_softmax: temperature must be positive");
  if (noise.shape() != logits.shape())
    throw ShapeError("gumbel_softmax: noise " + to_string(noise.shape()) + " vs logits " + to_string(logits.shape()));
  return ops::softmax_rows(ops::scale(ops::add_const(logits, noise.data()), 1.0 / temperature), widths);
}

Tensor gumbel_softmax(const Tensor& alpha, const Tensor& noise, double temperature, std::span<const int> widths) {
  return gumbel_softmax_logits(ops::log(alpha), noise, temperature, widths);
}

}  // namespace lgc
