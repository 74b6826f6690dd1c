#pragma once

#include "cgistereo/cost_volume.hpp"

namespace cgistereo {

/// Real-valued disparity field [B,1,h,w], in pixels of its own grid.
struct DisparityMap {
  Tensor values;
  Resolution resolution = Resolution::quarter;
};

/// Per pixel, picks the two largest cost values (ties resolved toward the
/// smaller index), softmaxes the pair and returns the expected index. The
/// selection is treated as constant under differentiation.
DisparityMap top2_regression(const CostVolume& cost);

/// d1(4y+fy, 4x+fx) = 4 * sum_k w[k, fy*4+fx, y, x] * d0(clamp(y+dy_k), clamp(x+dx_k))
/// over the 3x3 neighbourhood k = (dy+1)*3 + (dx+1). `weights` is [B,9,16,h,w]
/// and is expected to be normalized over axis 1.
Tensor convex_upsample(const Tensor& d0, const Tensor& weights);

/// Predicts superpixel weights from the quarter-resolution context and upsamples
/// d0 to full resolution.
class SuperpixelUpsampler {
 public:
  SuperpixelUpsampler(std::int64_t context_channels, std::int64_t hidden, double slope, ParamRegistry& reg,
                      std::uint64_t seed, const std::string& prefix = "upsample");

  /// Softmax-normalized weights [B,9,16,h,w].
  Tensor weights(const Tensor& ctx_f4) const;
  DisparityMap operator()(const DisparityMap& d0, const Tensor& ctx_f4) const;

 private:
  Conv2d conv1_;
  Conv2d conv2_;
  double slope_;
};

}  // namespace cgistereo
