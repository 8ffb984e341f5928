#include "lgcnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lgcnet/error.hpp"

namespace lgc {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0 ||
      config_.weight_decay < 0.0)
    throw ConfigError("invalid Adam hyperparameters");
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto d = p.data();
    auto g = std::as_const(p).grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < d.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      d[j] -= config_.lr * config_.weight_decay * d[j];
      d[j] -= config_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Sgd::Sgd(std::vector<Tensor> params, SgdConfig config) : params_(std::move(params)), config_(config) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0 || config_.weight_decay < 0.0)
    throw ConfigError("invalid SGD hyperparameters");
  for (const auto& p : params_) buf_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
}

void Sgd::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto d = p.data();
    auto g = std::as_const(p).grad();
    auto& b = buf_[i];
    for (size_t j = 0; j < d.size(); ++j) {
      const double gj = g[j] + config_.weight_decay * d[j];
      b[j] = config_.momentum * b[j] + gj;
      d[j] -= lr * b[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double cosine_lr(long step, long total, double lr_max, double lr_min) {
  if (total <= 0) return lr_min;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

double poly_lr(long step, long total, double base, double power) {
  if (total <= 0) return 0.0;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return base * std::pow(1.0 - frac, power);
}

}  // namespace lgc
