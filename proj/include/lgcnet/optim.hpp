#pragma once

#include <vector>

#include "lgcnet/tensor.hpp"

namespace lgc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: p -= lr * wd * p
};

/// Adam with decoupled weight decay. Parameters without a gradient buffer
/// are left untouched for that step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-3;  // added to the gradient
};

/// SGD with momentum; the learning rate is supplied per step by a schedule.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdConfig config);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  SgdConfig config_;
  std::vector<std::vector<double>> buf_;
};

/// lr_min + ½ (lr_max - lr_min)(1 + cos(π t / T)).
double cosine_lr(long step, long total, double lr_max = 0.025, double lr_min = 0.001);
/// base · (1 - t / T)^power.
double poly_lr(long step, long total, double base = 0.01, double power = 0.9);

}  // namespace lgc
