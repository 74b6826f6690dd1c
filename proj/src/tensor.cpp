#include "cgistereo/tensor.hpp"

#include <sstream>

namespace cgistereo {

namespace {

thread_local Tape* active_tape = nullptr;
thread_local bool recording_enabled = true;
thread_local BranchLog* active_branch_log = nullptr;

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  if (shape.empty()) os << "scalar";
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("tensor extent on axis " + std::to_string(i) + " must be positive, got " +
                       shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::span<double> Tensor::mutable_values() {
  if (impl_->recorded) throw std::logic_error("cannot mutate a tensor produced by a recorded op");
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw ShapeError("index rank does not match shape " + shape_str(shape()));
  }
  std::int64_t flat = 0;
  int axis = 0;
  for (auto i : index) {
    const auto extent = impl_->shape[static_cast<std::size_t>(axis)];
    if (i < 0 || i >= extent) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * extent + i;
    ++axis;
  }
  return impl_->values[static_cast<std::size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->values.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------

Tape::Tape() : previous_(active_tape) { active_tape = this; }

Tape::~Tape() { active_tape = previous_; }

Tape* Tape::current() { return recording_enabled ? active_tape : nullptr; }

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward already ran on this tape; call reset() first");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  auto* out = loss.impl();
  if (!out->requires_grad) throw std::logic_error("loss is not reachable from any requires_grad tensor");
  out->grad.assign(1, 1.0);

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    for (auto& in : it->inputs) {
      if (in->requires_grad && in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
    }
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  consumed_ = true;
}

NoGradGuard::NoGradGuard() : previous_(recording_enabled) { recording_enabled = false; }
NoGradGuard::~NoGradGuard() { recording_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  Tape* tape = Tape::current();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  out.impl()->requires_grad = true;
  out.impl()->recorded = true;
  Tape::Entry entry;
  entry.inputs.reserve(inputs.size());
  for (const auto& in : inputs) entry.inputs.push_back(in.impl_ptr());
  entry.output = out.impl_ptr();
  entry.backward = std::move(backward);
  tape->record(std::move(entry));
  return out;
}

std::span<double> grad_buffer(const Tensor& t) {
  auto* impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
  return impl->grad;
}

// ---------------------------------------------------------------------------

BranchLog::BranchLog() : previous_(active_branch_log) { active_branch_log = this; }
BranchLog::~BranchLog() { active_branch_log = previous_; }
BranchLog* BranchLog::current() { return active_branch_log; }

void BranchLog::note(std::uint64_t decision) {
  hash_ ^= decision + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
}

}  // namespace cgistereo
