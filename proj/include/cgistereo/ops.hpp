#pragma once

#include <array>
#include <optional>

#include "cgistereo/tensor.hpp"

namespace cgistereo {

enum class PadMode { zeros, circular };

/// Per-axis convolution geometry. For 2D convolutions only the last two entries
/// are used.
struct ConvGeometry {
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
  PadMode pad_mode = PadMode::zeros;

  static ConvGeometry uniform(std::int64_t stride, std::int64_t padding) {
    return {{stride, stride, stride}, {padding, padding, padding}, PadMode::zeros};
  }
};

// input [B,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
              const ConvGeometry& geom);
// input [B,Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw], bias [Cout]
Tensor conv3d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
              const ConvGeometry& geom);

/// Adjoint of the convolution with the same kernel and geometry. The kernel is
/// laid out [Cin, Cout, k...] where Cin is the channel count of `input`.
/// Output extent per axis: (in - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                        const ConvGeometry& geom);
Tensor conv_transpose3d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                        const ConvGeometry& geom);

// Elementwise, with broadcasting between equal-rank operands (extent-1 axes
// repeat).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);

/// Repeats an extent-1 axis `count` times (inserting it first when `insert` is
/// set). Gradient of the repeated axis is the sum over it.
Tensor expand(const Tensor& x, int axis, std::int64_t count, bool insert = false);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Contiguous sub-range [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
/// Value-identical copy through which no gradient flows.
Tensor detach(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Weighted sum with a constant array: sum(x * weights).
Tensor dot_const(const Tensor& x, std::span<const double> weights);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

// calibrate: normalize like train and overwrite the running stats with this
// batch's mean and biased variance, so a following eval pass reproduces it.
enum class NormMode { train, eval, calibrate };

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Normalizes over every axis except axis 1. Train mode uses batch statistics
/// (biased variance) and updates the running stats with the unbiased variance;
/// eval mode uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  NormMode mode);

}  // namespace cgistereo
