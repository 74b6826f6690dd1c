#include "cgistereo/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cgistereo {

void LossWeights::validate() const {
  if (lambda0 < 0.0 || lambda1 < 0.0) throw ShapeError("loss: weights must be nonnegative");
  if (!(smooth_l1_beta > 0.0)) throw ShapeError("loss: smooth_l1_beta must be positive");
}

Tensor valid_mask(const Tensor& gt, double max_disparity) {
  std::vector<double> m(gt.values().size());
  const auto g = gt.values();
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = (g[k] > 0.0 && g[k] < max_disparity) ? 1.0 : 0.0;
  return Tensor::from(gt.shape(), std::move(m));
}

Tensor smooth_l1(const Tensor& pred, const Tensor& gt, const Tensor& mask, double beta) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("smooth_l1: shape mismatch (pred " + shape_str(pred.shape()) + ", gt " + shape_str(gt.shape()) +
                     ", mask " + shape_str(mask.shape()) + ")");
  }
  if (!(beta > 0.0)) throw ShapeError("smooth_l1: beta must be positive");
  const auto p = pred.values();
  const auto g = gt.values();
  const auto m = mask.values();
  std::int64_t count = 0;
  double total = 0.0;
  BranchLog* log = BranchLog::current();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (m[k] == 0.0) continue;
    const double e = p[k] - g[k];
    const double a = std::abs(e);
    total += a < beta ? 0.5 * e * e / beta : a - 0.5 * beta;
    if (log) log->note((a < beta ? 2u : 0u) | (e > 0 ? 1u : 0u));
    ++count;
  }
  if (count == 0) throw ShapeError("smooth_l1: mask selects no pixels (no valid supervision)");
  const double n = static_cast<double>(count);
  return make_result({}, {total / n}, {pred}, [pred, gt, mask, beta, n](std::span<const double> go) {
    auto gp = grad_buffer(pred);
    const auto p = pred.values();
    const auto g = gt.values();
    const auto m = mask.values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (m[k] == 0.0) continue;
      const double e = p[k] - g[k];
      const double d = std::abs(e) < beta ? e / beta : (e > 0 ? 1.0 : -1.0);
      gp[k] += go[0] * d / n;
    }
  });
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::int64_t coarse, std::int64_t fine) {
  std::vector<Tap> taps(static_cast<std::size_t>(fine));
  const double ratio = static_cast<double>(coarse) / static_cast<double>(fine);
  for (std::int64_t i = 0; i < fine; ++i) {
    double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(coarse - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(s));
    const auto hi = std::min(lo + 1, coarse - 1);
    taps[i] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor upsample_disparity_x4(const Tensor& d0) {
  if (d0.rank() != 4 || d0.dim(1) != 1) {
    throw ShapeError("upsample: expected [B,1,h,w], got " + shape_str(d0.shape()));
  }
  const std::int64_t B = d0.dim(0), h = d0.dim(2), w = d0.dim(3), H = 4 * h, W = 4 * w;
  auto ty = bilinear_taps(h, H);
  auto tx = bilinear_taps(w, W);
  const auto v = d0.values();
  std::vector<double> out(static_cast<std::size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b) {
    const double* src = v.data() + b * h * w;
    for (std::int64_t y = 0; y < H; ++y) {
      const auto& a = ty[y];
      for (std::int64_t x = 0; x < W; ++x) {
        const auto& c = tx[x];
        const double top = (1 - c.frac) * src[a.lo * w + c.lo] + c.frac * src[a.lo * w + c.hi];
        const double bot = (1 - c.frac) * src[a.hi * w + c.lo] + c.frac * src[a.hi * w + c.hi];
        out[(b * H + y) * W + x] = 4.0 * ((1 - a.frac) * top + a.frac * bot);
      }
    }
  }
  return make_result({B, 1, H, W}, std::move(out), {d0},
                     [d0, B, h, w, H, W, ty = std::move(ty), tx = std::move(tx)](std::span<const double> g) {
                       auto gd = grad_buffer(d0);
                       for (std::int64_t b = 0; b < B; ++b) {
                         double* dst = gd.data() + b * h * w;
                         for (std::int64_t y = 0; y < H; ++y) {
                           const auto& a = ty[y];
                           for (std::int64_t x = 0; x < W; ++x) {
                             const auto& c = tx[x];
                             const double go = 4.0 * g[(b * H + y) * W + x];
                             dst[a.lo * w + c.lo] += go * (1 - a.frac) * (1 - c.frac);
                             dst[a.lo * w + c.hi] += go * (1 - a.frac) * c.frac;
                             dst[a.hi * w + c.lo] += go * a.frac * (1 - c.frac);
                             dst[a.hi * w + c.hi] += go * a.frac * c.frac;
                           }
                         }
                       }
                     });
}

Tensor total_loss(const Tensor& d0, const Tensor& d1, const Tensor& gt, const Tensor& mask, const LossWeights& w) {
  w.validate();
  Tensor l0 = smooth_l1(upsample_disparity_x4(d0), gt, mask, w.smooth_l1_beta);
  Tensor l1 = smooth_l1(d1, gt, mask, w.smooth_l1_beta);
  return add(scale(l0, w.lambda0), scale(l1, w.lambda1));
}

std::string MetricsReport::to_line() const {
  std::ostringstream os;
  os << std::setprecision(6);
  auto put = [&](const char* key, double v) {
    os << key << '=';
    if (defined()) {
      os << v;
    } else {
      os << "nan";
    }
    os << ' ';
  };
  put("epe", epe_px);
  put("d1", d1_percent);
  put("gt1", gt1_percent);
  put("gt2", gt2_percent);
  put("gt3", gt3_percent);
  os << "valid=" << valid_pixel_count;
  return os.str();
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("evaluate: shape mismatch (pred " + shape_str(pred.shape()) + ", gt " + shape_str(gt.shape()) +
                     ", mask " + shape_str(mask.shape()) + ")");
  }
  const auto p = pred.values();
  const auto g = gt.values();
  const auto m = mask.values();
  MetricsReport r;
  double abs_sum = 0.0;
  std::int64_t d1 = 0, gt1 = 0, gt2 = 0, gt3 = 0, n = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (m[k] == 0.0) continue;
    const double e = std::abs(p[k] - g[k]);
    abs_sum += e;
    ++n;
    if (e > std::max(3.0, 0.05 * g[k])) ++d1;
    if (e > 1.0) ++gt1;
    if (e > 2.0) ++gt2;
    if (e > 3.0) ++gt3;
  }
  r.valid_pixel_count = n;
  if (n == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.epe_px = r.d1_percent = r.gt1_percent = r.gt2_percent = r.gt3_percent = nan;
    return r;
  }
  const double dn = static_cast<double>(n);
  r.epe_px = abs_sum / dn;
  r.d1_percent = 100.0 * static_cast<double>(d1) / dn;
  r.gt1_percent = 100.0 * static_cast<double>(gt1) / dn;
  r.gt2_percent = 100.0 * static_cast<double>(gt2) / dn;
  r.gt3_percent = 100.0 * static_cast<double>(gt3) / dn;
  return r;
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  for (const auto& r : reports) {
    if (!r.defined()) continue;
    const double n = static_cast<double>(r.valid_pixel_count);
    out.epe_px += r.epe_px * n;
    out.d1_percent += r.d1_percent * n;
    out.gt1_percent += r.gt1_percent * n;
    out.gt2_percent += r.gt2_percent * n;
    out.gt3_percent += r.gt3_percent * n;
    out.valid_pixel_count += r.valid_pixel_count;
  }
  if (out.valid_pixel_count == 0) return evaluate(Tensor::zeros({1}), Tensor::zeros({1}), Tensor::zeros({1}));
  const double n = static_cast<double>(out.valid_pixel_count);
  out.epe_px /= n;
  out.d1_percent /= n;
  out.gt1_percent /= n;
  out.gt2_percent /= n;
  out.gt3_percent /= n;
  return out;
}

}  // namespace cgistereo
