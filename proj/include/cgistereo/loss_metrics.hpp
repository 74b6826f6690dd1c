#pragma once

#include <string>

#include "cgistereo/regression.hpp"

namespace cgistereo {

struct LossWeights {
  double lambda0 = 0.3;
  double lambda1 = 1.0;
  double smooth_l1_beta = 1.0;

  void validate() const;
};

/// 1 where gt > 0 and gt < max_disparity.
Tensor valid_mask(const Tensor& gt, double max_disparity);

/// Mean over mask==1 pixels of 0.5 e^2 / beta (|e| < beta) or |e| - 0.5 beta.
Tensor smooth_l1(const Tensor& pred, const Tensor& gt, const Tensor& mask, double beta);

/// Bilinear x4 upsampling (half-pixel centres, edge clamped) with values scaled
/// by 4, taking a quarter-resolution disparity to full-resolution pixels.
Tensor upsample_disparity_x4(const Tensor& d0);

/// lambda0 * smooth_l1(up4(d0)) + lambda1 * smooth_l1(d1), both against the
/// full-resolution gt over the same mask.
Tensor total_loss(const Tensor& d0, const Tensor& d1, const Tensor& gt, const Tensor& mask, const LossWeights& w);

struct MetricsReport {
  double epe_px = 0.0;
  double d1_percent = 0.0;
  double gt1_percent = 0.0;
  double gt2_percent = 0.0;
  double gt3_percent = 0.0;
  std::int64_t valid_pixel_count = 0;

  bool defined() const { return valid_pixel_count > 0; }
  /// "epe=... d1=... gt1=... gt2=... gt3=... valid=..." ("nan" when undefined).
  std::string to_line() const;
};

/// EPE, D1 (|e| > max(3, 0.05 gt)) and >k px rates over mask==1 pixels, all with
/// strict inequality.
MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Pixel-weighted mean of several reports.
MetricsReport aggregate(const std::vector<MetricsReport>& reports);

}  // namespace cgistereo
