#pragma once

#include "cgistereo/nn.hpp"

namespace cgistereo {

enum class Resolution { quarter, eighth, sixteenth, thirtysecond, full };

/// [B, C, D, H, W] volume over candidate disparities.
struct CostVolume {
  Tensor data;
  double disparity_stride = 4.0;  // full-resolution pixels per disparity index
  Resolution resolution = Resolution::quarter;

  std::int64_t channels() const { return data.dim(1); }
  std::int64_t disparities() const { return data.dim(2); }
};

struct MatchingConfig {
  std::int64_t max_disparity = 64;  // full-resolution pixels, divisible by 4
  std::int64_t corr_channels = 8;
  double epsilon = 1e-8;

  std::int64_t quarter_disparities() const { return max_disparity / 4; }
  void validate() const;
};

/// Cosine similarity between f_l(:, y, x) and f_r(:, y, x - d) for
/// d in [0, max_disparity / 4); entries with x - d < 0 are exactly zero.
CostVolume build_correlation(const Tensor& f_left, const Tensor& f_right, const MatchingConfig& cfg);

/// 1-channel correlation -> corr_channels via a 1x3x3 conv, BatchNorm and leaky
/// ReLU (the kernel does not mix disparity slices).
class CorrelationLift {
 public:
  CorrelationLift(const MatchingConfig& cfg, ParamRegistry& reg, double slope, std::uint64_t seed,
                  const std::string& prefix = "cost.lift");
  CostVolume operator()(const CostVolume& corr, NormMode mode);

 private:
  ConvBnAct3d block_;
};

/// V_AF = A_corr * F_l, where F_l is the left quarter-resolution feature map
/// projected (1x1 conv) to corr_channels and repeated along disparity.
class AttentionFeatureVolume {
 public:
  AttentionFeatureVolume(std::int64_t feature_channels, const MatchingConfig& cfg, ParamRegistry& reg,
                         std::uint64_t seed, const std::string& prefix = "cost.afv");
  CostVolume operator()(const CostVolume& a_corr, const Tensor& f_left) const;

  const Conv2d& projection() const { return proj_; }

 private:
  Conv2d proj_;
};

}  // namespace cgistereo
