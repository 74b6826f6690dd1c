#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgistereo {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for any contract violation in the engine or the pipeline built on it
/// (shape mismatch, bad configuration, malformed input).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool recorded = false;  // produced by an op recorded on a tape
};

}  // namespace detail

/// Dense row-major array of doubles, optionally participating in a reverse-mode
/// computation graph. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

  std::span<const double> values() const { return impl_->values; }
  // Leaves only: parameter initialization and optimizer updates.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient after backward; all zeros if the tensor was never reached.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(std::span<const double>)>);
};

/// Ordered record of executed primitives. Recording is in execution order, so
/// the record is topologically sorted by construction; backward walks it once in
/// reverse. Constructing a Tape makes it the thread's active tape until it is
/// destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  /// Populates grad on every requires_grad tensor recorded here. Rejects a
  /// non-scalar loss, a loss not recorded on this tape, and a second call
  /// before reset().
  void backward(const Tensor& loss);
  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  struct Entry {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(std::span<const double>)> backward;
  };
  void record(Entry entry);

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

/// Suspends recording on the active tape for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates the output of a primitive. When a tape is active and any input
/// requires grad, the op is recorded and `backward` is later called with the
/// output gradient; it must accumulate into the inputs via accumulate_grad().
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

/// Grad buffer of `t`, allocated as zeros on first use. Only valid inside a
/// backward closure for inputs that require grad.
std::span<double> grad_buffer(const Tensor& t);
inline bool needs_grad(const Tensor& t) { return t.requires_grad(); }

/// Records non-smooth branch decisions (activation signs, top-k selections)
/// while active, so finite-difference checks can detect kink crossings.
class BranchLog {
 public:
  BranchLog();
  ~BranchLog();
  BranchLog(const BranchLog&) = delete;
  BranchLog& operator=(const BranchLog&) = delete;

  static BranchLog* current();
  void note(std::uint64_t decision);
  std::uint64_t signature() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  BranchLog* previous_ = nullptr;
};

}  // namespace cgistereo
