#include "lgcnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lgcnet/error.hpp"

namespace lgc {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel_of(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(values.begin(), values.end());
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dimension index out of range for " + to_string(shape()));
  return impl_->shape[static_cast<size_t>(i)];
}

double Tensor::at(int64_t r, int64_t c) const {
  return impl_->data[static_cast<size_t>(r * impl_->shape.back() + c)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

std::span<double> Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>(*impl_);
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(), [](double v) { return std::isfinite(v); });
}

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape& active_tape() { return g_tape; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
                  Backward backward) {
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw ShapeError("backward() needs a scalar loss");
  if (!loss.requires_grad()) {
    records_.clear();
    throw Error("loss is not connected to the tape");
  }
  const bool produced_here =
      std::any_of(records_.begin(), records_.end(), [&](const Record& r) { return r.output.get() == loss.impl(); });
  if (!produced_here && !records_.empty()) {
    records_.clear();
    throw Error("loss was not produced on the current tape");
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // nothing flowed into this node
    for (const auto& in : it->inputs)
      if (in->requires_grad) in->ensure_grad();
    it->backward();
    for (const auto& in : it->inputs) {
      for (double g : in->grad)
        if (!std::isfinite(g)) {
          records_.clear();
          throw NumericError("non-finite gradient during backward");
        }
    }
  }
  records_.clear();
}

void backward(const Tensor& loss) { active_tape().backward(loss); }

}  // namespace lgc
