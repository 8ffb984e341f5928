#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace lgc {

using Shape = std::vector<int64_t>;

/// Cache-line aligned allocation. Vectorised kernels choose their code path by
/// address alignment, so aligning every buffer keeps results bitwise
/// reproducible across runs and across networks that share weights.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulated into
  bool requires_grad = false;

  void ensure_grad();
};

/// Dense row-major tensor of doubles.
///
/// A Tensor is a handle: copies share storage, the same way autodiff nodes
/// are shared between the tape and user code. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const;
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  Buffer& vec() { return impl_->data; }
  const Buffer& vec() const { return impl_->data; }
  double& operator[](int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; allocated (zero-filled) on first access when requires_grad.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  /// Copy of the values with no gradient tracking.
  Tensor detach() const;
  bool all_finite() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Recorded operations for reverse-mode differentiation.
///
/// Records are appended in execution order, so inputs always precede the
/// operations that consume them; backward() replays them in exact reverse.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, Backward backward);

  /// Seeds d(loss)/d(loss) = 1, replays the tape and clears it.
  void backward(const Tensor& loss);
  void clear() { records_.clear(); }
  size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    Backward backward;
  };
  std::vector<Record> records_;
};

/// Tape of the calling thread. Each thread records onto its own tape.
Tape& active_tape();

bool grad_enabled();

/// Disables recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs backward on the active tape.
void backward(const Tensor& loss);

}  // namespace lgc
