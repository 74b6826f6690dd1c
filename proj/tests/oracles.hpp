#pragma once

// Independent scalar-loop reference implementations. They share nothing with
// the library beyond the Tensor container, so agreement is meaningful.

#include <array>
#include <optional>
#include <vector>

#include "cgistereo/pipeline.hpp"

namespace oracle {

using cgistereo::Tensor;

double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs_diff(const std::vector<double>& a, const Tensor& b);

// Direct convolution over [B,C,D,H,W] (rank 4 inputs are treated as D = 1),
// zero or circular padding.
Tensor conv(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
            std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad, bool circular = false);

// Scatter form of the transposed convolution; kernel [Cin, Cout, k...].
Tensor conv_transpose(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
                      std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad);

// Softmax in long double along one axis.
Tensor softmax(const Tensor& x, int axis);

Tensor correlation(const Tensor& f_left, const Tensor& f_right, std::int64_t disparities, double eps);

// Every (d, y, x) fiber of a * proj(f) built one element at a time.
Tensor afv(const Tensor& a, const Tensor& f, const Tensor& proj_w, const Tensor& proj_b);

struct CgfParams {
  Tensor proj_w, proj_b, att_w, att_b, fuse_w, gamma, beta;
  static CgfParams from(const cgistereo::ParamRegistry& reg, const std::string& prefix);
};
struct CgfResult {
  Tensor fused;
  Tensor attention;
};
// Train-mode batch statistics, eps 1e-5.
CgfResult cgf(const Tensor& geo, const Tensor& ctx, const CgfParams& p, double slope);

// Full descending sort per pixel; pair softmax evaluated in long double.
Tensor top2(const Tensor& cost);

struct AdamScalar {
  double m = 0, v = 0;
  double update(double param, double grad, std::int64_t t, double lr, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8);
};

}  // namespace oracle
