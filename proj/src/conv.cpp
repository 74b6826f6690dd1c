#include <Eigen/Core>

#include "cgistereo/ops.hpp"

namespace cgistereo {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Spatial layout of one convolution, always in 3D form (2D convs use depth 1).
struct ConvPlan {
  std::int64_t batch = 0;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::array<std::int64_t, 3> in{};      // input spatial extents
  std::array<std::int64_t, 3> out{};     // output spatial extents
  std::array<std::int64_t, 3> kernel{};  // kernel extents
  std::array<std::int64_t, 3> stride{};
  std::array<std::int64_t, 3> pad{};
  PadMode pad_mode = PadMode::zeros;

  std::int64_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::int64_t col_rows() const { return in_channels * kernel_volume(); }
};

const char* axis_name(int spatial_dims, int axis) {
  static const char* names3[] = {"depth", "height", "width"};
  static const char* names2[] = {"height", "width"};
  return spatial_dims == 3 ? names3[axis] : names2[axis];
}

// Source coordinate for output position o and kernel tap k, or -1 if it falls in
// zero padding.
inline std::int64_t source_index(std::int64_t o, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                 std::int64_t extent, PadMode mode) {
  std::int64_t i = o * stride - pad + k;
  if (i >= 0 && i < extent) return i;
  if (mode == PadMode::circular) return ((i % extent) + extent) % extent;
  return -1;
}

void im2col(const double* src, const ConvPlan& p, double* col) {
  const std::int64_t P = p.out_volume();
  const std::int64_t kvol = p.kernel_volume();
  for (std::int64_t c = 0; c < p.in_channels; ++c) {
    const double* plane = src + c * p.in_volume();
    for (std::int64_t kz = 0; kz < p.kernel[0]; ++kz) {
      for (std::int64_t ky = 0; ky < p.kernel[1]; ++ky) {
        for (std::int64_t kx = 0; kx < p.kernel[2]; ++kx) {
          const std::int64_t row = c * kvol + (kz * p.kernel[1] + ky) * p.kernel[2] + kx;
          double* dst = col + row * P;
          for (std::int64_t oz = 0; oz < p.out[0]; ++oz) {
            const auto iz = source_index(oz, kz, p.stride[0], p.pad[0], p.in[0], p.pad_mode);
            for (std::int64_t oy = 0; oy < p.out[1]; ++oy) {
              const auto iy = source_index(oy, ky, p.stride[1], p.pad[1], p.in[1], p.pad_mode);
              double* line = dst + (oz * p.out[1] + oy) * p.out[2];
              if (iz < 0 || iy < 0) {
                std::fill(line, line + p.out[2], 0.0);
                continue;
              }
              const double* srow = plane + (iz * p.in[1] + iy) * p.in[2];
              for (std::int64_t ox = 0; ox < p.out[2]; ++ox) {
                const auto ix = source_index(ox, kx, p.stride[2], p.pad[2], p.in[2], p.pad_mode);
                line[ox] = ix < 0 ? 0.0 : srow[ix];
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvPlan& p, double* dst) {
  const std::int64_t P = p.out_volume();
  const std::int64_t kvol = p.kernel_volume();
  for (std::int64_t c = 0; c < p.in_channels; ++c) {
    double* plane = dst + c * p.in_volume();
    for (std::int64_t kz = 0; kz < p.kernel[0]; ++kz) {
      for (std::int64_t ky = 0; ky < p.kernel[1]; ++ky) {
        for (std::int64_t kx = 0; kx < p.kernel[2]; ++kx) {
          const std::int64_t row = c * kvol + (kz * p.kernel[1] + ky) * p.kernel[2] + kx;
          const double* src = col + row * P;
          for (std::int64_t oz = 0; oz < p.out[0]; ++oz) {
            const auto iz = source_index(oz, kz, p.stride[0], p.pad[0], p.in[0], p.pad_mode);
            if (iz < 0) continue;
            for (std::int64_t oy = 0; oy < p.out[1]; ++oy) {
              const auto iy = source_index(oy, ky, p.stride[1], p.pad[1], p.in[1], p.pad_mode);
              if (iy < 0) continue;
              const double* line = src + (oz * p.out[1] + oy) * p.out[2];
              double* drow = plane + (iz * p.in[1] + iy) * p.in[2];
              for (std::int64_t ox = 0; ox < p.out[2]; ++ox) {
                const auto ix = source_index(ox, kx, p.stride[2], p.pad[2], p.in[2], p.pad_mode);
                if (ix >= 0) drow[ix] += line[ox];
              }
            }
          }
        }
      }
    }
  }
}

// Builds the plan for a forward convolution over `spatial_dims` trailing axes.
ConvPlan plan_conv(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom, int spatial_dims,
                   const char* op) {
  const int rank = 2 + spatial_dims;
  if (input.rank() != rank) {
    throw ShapeError(std::string(op) + ": input must have rank " + std::to_string(rank) + ", got " +
                     shape_str(input.shape()));
  }
  if (kernel.rank() != rank) {
    throw ShapeError(std::string(op) + ": kernel must have rank " + std::to_string(rank) + ", got " +
                     shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError(std::string(op) + ": channel axis mismatch, input has " + std::to_string(input.dim(1)) +
                     " channels but kernel expects " + std::to_string(kernel.dim(1)));
  }
  ConvPlan p;
  p.batch = input.dim(0);
  p.in_channels = input.dim(1);
  p.out_channels = kernel.dim(0);
  p.pad_mode = geom.pad_mode;
  const int offset = 3 - spatial_dims;
  for (int a = 0; a < 3; ++a) {
    if (a < offset) {
      p.in[a] = p.out[a] = p.kernel[a] = p.stride[a] = 1;
      p.pad[a] = 0;
      continue;
    }
    const int axis = 2 + a - offset;
    p.in[a] = input.dim(axis);
    p.kernel[a] = kernel.dim(axis);
    p.stride[a] = geom.stride[a];
    p.pad[a] = geom.padding[a];
    if (p.stride[a] <= 0 || p.pad[a] < 0) {
      throw ShapeError(std::string(op) + ": invalid stride/padding on " + axis_name(spatial_dims, a - offset) +
                       " axis");
    }
    if (p.pad_mode == PadMode::circular && p.pad[a] > p.in[a]) {
      throw ShapeError(std::string(op) + ": circular padding exceeds extent on " +
                       axis_name(spatial_dims, a - offset) + " axis");
    }
    const std::int64_t span = p.in[a] + 2 * p.pad[a] - p.kernel[a];
    if (span < 0) {
      throw ShapeError(std::string(op) + ": kernel larger than padded input on " +
                       axis_name(spatial_dims, a - offset) + " axis");
    }
    p.out[a] = span / p.stride[a] + 1;
  }
  return p;
}

Shape out_shape(const ConvPlan& p, int spatial_dims, bool transposed) {
  Shape s{p.batch, transposed ? p.in_channels : p.out_channels};
  for (int a = 3 - spatial_dims; a < 3; ++a) s.push_back(transposed ? p.in[a] : p.out[a]);
  return s;
}

void check_bias(const std::optional<Tensor>& bias, std::int64_t channels, const char* op) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias must have shape " + std::to_string(channels) + ", got " +
                     shape_str(bias->shape()));
  }
}

Tensor conv_forward(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                    const ConvGeometry& geom, int spatial_dims, const char* op) {
  const ConvPlan p = plan_conv(input, kernel, geom, spatial_dims, op);
  check_bias(bias, p.out_channels, op);
  const std::int64_t K = p.col_rows();
  const std::int64_t P = p.out_volume();
  const std::int64_t in_stride = p.in_channels * p.in_volume();
  const std::int64_t out_stride = p.out_channels * P;

  std::vector<double> out(static_cast<std::size_t>(p.batch * out_stride));
  RowMatrix col(K, P);
  ConstMapMatrix w(kernel.values().data(), p.out_channels, K);
  for (std::int64_t b = 0; b < p.batch; ++b) {
    im2col(input.values().data() + b * in_stride, p, col.data());
    MapMatrix y(out.data() + b * out_stride, p.out_channels, P);
    y.noalias() = w * col;
    if (bias) {
      for (std::int64_t o = 0; o < p.out_channels; ++o) y.row(o).array() += bias->values()[o];
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  return make_result(out_shape(p, spatial_dims, false), std::move(out), inputs,
                     [input, kernel, bias, p, K, P, in_stride, out_stride](std::span<const double> g) {
                       ConstMapMatrix w(kernel.values().data(), p.out_channels, K);
                       RowMatrix col(K, P);
                       for (std::int64_t b = 0; b < p.batch; ++b) {
                         ConstMapMatrix gy(g.data() + b * out_stride, p.out_channels, P);
                         if (needs_grad(kernel)) {
                           im2col(input.values().data() + b * in_stride, p, col.data());
                           MapMatrix gw(grad_buffer(kernel).data(), p.out_channels, K);
                           gw.noalias() += gy * col.transpose();
                         }
                         if (needs_grad(input)) {
                           col.noalias() = w.transpose() * gy;
                           col2im(col.data(), p, grad_buffer(input).data() + b * in_stride);
                         }
                         if (bias && needs_grad(*bias)) {
                           auto gb = grad_buffer(*bias);
                           for (std::int64_t o = 0; o < p.out_channels; ++o) gb[o] += gy.row(o).sum();
                         }
                       }
                     });
}

Tensor conv_transpose_forward(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                              const ConvGeometry& geom, int spatial_dims, const char* op) {
  const int rank = 2 + spatial_dims;
  if (input.rank() != rank || kernel.rank() != rank) {
    throw ShapeError(std::string(op) + ": input and kernel must have rank " + std::to_string(rank));
  }
  if (kernel.dim(0) != input.dim(1)) {
    throw ShapeError(std::string(op) + ": channel axis mismatch, input has " + std::to_string(input.dim(1)) +
                     " channels but kernel expects " + std::to_string(kernel.dim(0)));
  }
  // Plan of the adjoint forward convolution: its input is our output.
  ConvPlan p;
  p.batch = input.dim(0);
  p.in_channels = kernel.dim(1);
  p.out_channels = kernel.dim(0);
  p.pad_mode = geom.pad_mode;
  const int offset = 3 - spatial_dims;
  for (int a = 0; a < 3; ++a) {
    if (a < offset) {
      p.in[a] = p.out[a] = p.kernel[a] = p.stride[a] = 1;
      p.pad[a] = 0;
      continue;
    }
    const int axis = 2 + a - offset;
    p.out[a] = input.dim(axis);
    p.kernel[a] = kernel.dim(axis);
    p.stride[a] = geom.stride[a];
    p.pad[a] = geom.padding[a];
    if (p.stride[a] <= 0 || p.pad[a] < 0) {
      throw ShapeError(std::string(op) + ": invalid stride/padding on " + axis_name(spatial_dims, a - offset) +
                       " axis");
    }
    p.in[a] = (p.out[a] - 1) * p.stride[a] - 2 * p.pad[a] + p.kernel[a];
    if (p.in[a] <= 0) {
      throw ShapeError(std::string(op) + ": computed output extent is not positive on " +
                       axis_name(spatial_dims, a - offset) + " axis");
    }
  }
  check_bias(bias, p.in_channels, op);
  const std::int64_t K = p.col_rows();
  const std::int64_t P = p.out_volume();
  const std::int64_t x_stride = p.out_channels * P;          // our input
  const std::int64_t y_stride = p.in_channels * p.in_volume();  // our output

  std::vector<double> out(static_cast<std::size_t>(p.batch * y_stride), 0.0);
  ConstMapMatrix w(kernel.values().data(), p.out_channels, K);
  RowMatrix col(K, P);
  for (std::int64_t b = 0; b < p.batch; ++b) {
    ConstMapMatrix x(input.values().data() + b * x_stride, p.out_channels, P);
    col.noalias() = w.transpose() * x;
    double* y = out.data() + b * y_stride;
    col2im(col.data(), p, y);
    if (bias) {
      for (std::int64_t c = 0; c < p.in_channels; ++c) {
        const double v = bias->values()[c];
        for (std::int64_t i = 0; i < p.in_volume(); ++i) y[c * p.in_volume() + i] += v;
      }
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  return make_result(out_shape(p, spatial_dims, true), std::move(out), inputs,
                     [input, kernel, bias, p, K, P, x_stride, y_stride](std::span<const double> g) {
                       ConstMapMatrix w(kernel.values().data(), p.out_channels, K);
                       RowMatrix col(K, P);
                       for (std::int64_t b = 0; b < p.batch; ++b) {
                         const double* gy = g.data() + b * y_stride;
                         im2col(gy, p, col.data());
                         if (needs_grad(input)) {
                           MapMatrix gx(grad_buffer(input).data() + b * x_stride, p.out_channels, P);
                           gx.noalias() += w * col;
                         }
                         if (needs_grad(kernel)) {
                           ConstMapMatrix x(input.values().data() + b * x_stride, p.out_channels, P);
                           MapMatrix gw(grad_buffer(kernel).data(), p.out_channels, K);
                           gw.noalias() += x * col.transpose();
                         }
                         if (bias && needs_grad(*bias)) {
                           auto gb = grad_buffer(*bias);
                           for (std::int64_t c = 0; c < p.in_channels; ++c) {
                             double s = 0.0;
                             for (std::int64_t i = 0; i < p.in_volume(); ++i) s += gy[c * p.in_volume() + i];
                             gb[c] += s;
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
              const ConvGeometry& geom) {
  return conv_forward(input, kernel, bias, geom, 2, "conv2d");
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
              const ConvGeometry& geom) {
  return conv_forward(input, kernel, bias, geom, 3, "conv3d");
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                        const ConvGeometry& geom) {
  return conv_transpose_forward(input, kernel, bias, geom, 2, "conv_transpose2d");
}

Tensor conv_transpose3d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                        const ConvGeometry& geom) {
  return conv_transpose_forward(input, kernel, bias, geom, 3, "conv_transpose3d");
}

}  // namespace cgistereo
