#include "cgistereo/cost_volume.hpp"

#include <cmath>

namespace cgistereo {

void MatchingConfig::validate() const {
  if (max_disparity <= 0 || max_disparity % 4 != 0) {
    throw ShapeError("matching: max_disparity must be a positive multiple of 4, got " +
                     std::to_string(max_disparity));
  }
  if (corr_channels < 1) throw ShapeError("matching: corr_channels must be >= 1");
  if (!(epsilon > 0.0)) throw ShapeError("matching: epsilon must be positive");
}

CostVolume build_correlation(const Tensor& f_left, const Tensor& f_right, const MatchingConfig& cfg) {
  cfg.validate();
  if (f_left.rank() != 4 || f_left.shape() != f_right.shape()) {
    throw ShapeError("correlation: left/right features must share a [B,C,H,W] shape, got " +
                     shape_str(f_left.shape()) + " and " + shape_str(f_right.shape()));
  }
  const std::int64_t B = f_left.dim(0), C = f_left.dim(1), H = f_left.dim(2), W = f_left.dim(3);
  const std::int64_t D = cfg.quarter_disparities();
  if (D > W) {
    throw ShapeError("correlation: max_disparity/4 = " + std::to_string(D) + " exceeds feature width " +
                     std::to_string(W));
  }
  const double eps = cfg.epsilon;
  const std::int64_t plane = H * W;
  const auto lv = f_left.values();
  const auto rv = f_right.values();

  // Per-pixel norms.
  std::vector<double> nl(static_cast<std::size_t>(B * plane)), nr(nl.size());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < plane; ++p) {
      double sl = 0.0, sr = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        const auto k = (b * C + c) * plane + p;
        sl += lv[k] * lv[k];
        sr += rv[k] * rv[k];
      }
      nl[b * plane + p] = std::sqrt(sl);
      nr[b * plane + p] = std::sqrt(sr);
    }
  }

  std::vector<double> out(static_cast<std::size_t>(B * D * plane), 0.0);
  std::vector<double> dots(out.size(), 0.0);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t d = 0; d < D; ++d) {
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = d; x < W; ++x) {
          double dot = 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const auto base = (b * C + c) * plane + y * W;
            dot += lv[base + x] * rv[base + x - d];
          }
          const auto o = ((b * D + d) * H + y) * W + x;
          dots[o] = dot;
          out[o] = dot / (nl[b * plane + y * W + x] * nr[b * plane + y * W + x - d] + eps);
        }
      }
    }
  }

  Tensor data = make_result(
      {B, 1, D, H, W}, std::move(out), {f_left, f_right},
      [f_left, f_right, B, C, H, W, D, eps, nl = std::move(nl), nr = std::move(nr),
       dots = std::move(dots)](std::span<const double> g) {
        const std::int64_t plane = H * W;
        const auto lv = f_left.values();
        const auto rv = f_right.values();
        const bool want_l = needs_grad(f_left), want_r = needs_grad(f_right);
        std::span<double> gl, gr;
        if (want_l) gl = grad_buffer(f_left);
        if (want_r) gr = grad_buffer(f_right);
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t d = 0; d < D; ++d) {
            for (std::int64_t y = 0; y < H; ++y) {
              for (std::int64_t x = d; x < W; ++x) {
                const auto o = ((b * D + d) * H + y) * W + x;
                if (g[o] == 0.0) continue;
                const double a = nl[b * plane + y * W + x];
                const double r = nr[b * plane + y * W + x - d];
                const double den = a * r + eps;
                const double dot = dots[o];
                // d/dl = r_vec/den - dot * r / den^2 * l_vec / |l|
                const double kl = a > 0.0 ? dot * r / (den * den * a) : 0.0;
                const double kr = r > 0.0 ? dot * a / (den * den * r) : 0.0;
                for (std::int64_t c = 0; c < C; ++c) {
                  const auto base = (b * C + c) * plane + y * W;
                  const double lvx = lv[base + x];
                  const double rvx = rv[base + x - d];
                  if (want_l) gl[base + x] += g[o] * (rvx / den - kl * lvx);
                  if (want_r) gr[base + x - d] += g[o] * (lvx / den - kr * rvx);
                }
              }
            }
          }
        }
      });
  return {data, 4.0, Resolution::quarter};
}

CorrelationLift::CorrelationLift(const MatchingConfig& cfg, ParamRegistry& reg, double slope, std::uint64_t seed,
                                 const std::string& prefix) {
  cfg.validate();
  block_ = make_conv_bn_act3d(reg, prefix, 1, cfg.corr_channels, {1, 3, 3}, {1, 1, 1}, slope, seed);
}

CostVolume CorrelationLift::operator()(const CostVolume& corr, NormMode mode) {
  if (corr.data.rank() != 5 || corr.channels() != 1) {
    throw ShapeError("correlation lift: expected a 1-channel [B,1,D,H,W] volume, got " +
                     shape_str(corr.data.shape()));
  }
  return {block_(corr.data, mode), corr.disparity_stride, corr.resolution};
}

AttentionFeatureVolume::AttentionFeatureVolume(std::int64_t feature_channels, const MatchingConfig& cfg,
                                               ParamRegistry& reg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  proj_ = make_conv2d(reg, prefix + ".proj", feature_channels, cfg.corr_channels, 1, 1, true, seed);
}

CostVolume AttentionFeatureVolume::operator()(const CostVolume& a_corr, const Tensor& f_left) const {
  const Tensor& a = a_corr.data;
  if (a.rank() != 5 || f_left.rank() != 4) {
    throw ShapeError("afv: expected [B,C,D,H,W] attention and [B,C4,H,W] features");
  }
  if (f_left.dim(1) != proj_.weight.dim(1)) {
    throw ShapeError("afv: feature channel mismatch, got " + std::to_string(f_left.dim(1)) + ", projection expects " +
                     std::to_string(proj_.weight.dim(1)));
  }
  if (a.dim(1) != proj_.weight.dim(0)) {
    throw ShapeError("afv: attention has " + std::to_string(a.dim(1)) + " channels, projected features have " +
                     std::to_string(proj_.weight.dim(0)));
  }
  if (a.dim(0) != f_left.dim(0) || a.dim(3) != f_left.dim(2) || a.dim(4) != f_left.dim(3)) {
    throw ShapeError("afv: spatial mismatch between " + shape_str(a.shape()) + " and " + shape_str(f_left.shape()));
  }
  Tensor projected = proj_(f_left);
  Tensor expanded = expand(projected, 2, 1, true);  // [B,C,1,H,W], broadcast by mul
  return {mul(a, expanded), a_corr.disparity_stride, a_corr.resolution};
}

}  // namespace cgistereo
