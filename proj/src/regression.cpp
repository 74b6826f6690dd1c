#include "cgistereo/regression.hpp"

#include <algorithm>
#include <cmath>

namespace cgistereo {

DisparityMap top2_regression(const CostVolume& cost) {
  const Tensor& c = cost.data;
  if (c.rank() != 5 || c.dim(1) != 1) {
    throw ShapeError("top2 regression: expected a [B,1,D,H,W] cost volume, got " + shape_str(c.shape()));
  }
  const std::int64_t B = c.dim(0), D = c.dim(2), H = c.dim(3), W = c.dim(4);
  if (D < 2) throw ShapeError("top2 regression: need at least 2 disparities, got " + std::to_string(D));
  const std::int64_t plane = H * W;
  const auto cv = c.values();

  std::vector<double> out(static_cast<std::size_t>(B * plane));
  std::vector<std::int64_t> first(out.size()), second(out.size());
  std::vector<double> w_first(out.size());
  BranchLog* log = BranchLog::current();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const double* col = cv.data() + b * D * plane + p;
      std::int64_t i = 0, j = -1;
      for (std::int64_t d = 1; d < D; ++d) {
        const double v = col[d * plane];
        if (v > col[i * plane]) {
          j = i;
          i = d;
        } else if (j < 0 || v > col[j * plane]) {
          j = d;
        }
      }
      // softmax over the pair: w_i = sigmoid(c_i - c_j)
      const double delta = col[i * plane] - col[j * plane];
      const double wi = delta >= 0 ? 1.0 / (1.0 + std::exp(-delta)) : std::exp(delta) / (1.0 + std::exp(delta));
      const auto k = b * plane + p;
      out[k] = wi * static_cast<double>(i) + (1.0 - wi) * static_cast<double>(j);
      first[k] = i;
      second[k] = j;
      w_first[k] = wi;
      if (log) log->note(static_cast<std::uint64_t>(i * D + j));
    }
  }

  Tensor values = make_result(
      {B, 1, H, W}, std::move(out), {c},
      [c, D, plane, first = std::move(first), second = std::move(second),
       w_first = std::move(w_first)](std::span<const double> g) {
        auto gc = grad_buffer(c);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const auto b = static_cast<std::int64_t>(k) / plane;
          const auto p = static_cast<std::int64_t>(k) % plane;
          const double wi = w_first[k];
          const double dd = static_cast<double>(first[k] - second[k]) * wi * (1.0 - wi) * g[k];
          gc[(b * D + first[k]) * plane + p] += dd;
          gc[(b * D + second[k]) * plane + p] -= dd;
        }
      });
  return {values, cost.resolution};
}

Tensor convex_upsample(const Tensor& d0, const Tensor& weights) {
  if (d0.rank() != 4 || d0.dim(1) != 1) {
    throw ShapeError("convex upsample: expected d0 of shape [B,1,h,w], got " + shape_str(d0.shape()));
  }
  const std::int64_t B = d0.dim(0), h = d0.dim(2), w = d0.dim(3);
  const Shape expected{B, 9, 16, h, w};
  if (weights.shape() != expected) {
    throw ShapeError("convex upsample: weights must have shape " + shape_str(expected) + ", got " +
                     shape_str(weights.shape()));
  }
  const std::int64_t H = 4 * h, W = 4 * w;
  const std::int64_t plane = h * w;
  const auto dv = d0.values();
  const auto wv = weights.values();
  auto neighbour = [h, w](std::int64_t y, std::int64_t x, int k) {
    const std::int64_t yy = std::clamp<std::int64_t>(y + k / 3 - 1, 0, h - 1);
    const std::int64_t xx = std::clamp<std::int64_t>(x + k % 3 - 1, 0, w - 1);
    return yy * w + xx;
  };

  std::vector<double> out(static_cast<std::size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t f = 0; f < 16; ++f) {
          double s = 0.0;
          for (int k = 0; k < 9; ++k) {
            s += wv[((b * 9 + k) * 16 + f) * plane + y * w + x] * dv[b * plane + neighbour(y, x, k)];
          }
          out[(b * H + 4 * y + f / 4) * W + 4 * x + f % 4] = 4.0 * s;
        }
      }
    }
  }

  return make_result({B, 1, H, W}, std::move(out), {d0, weights},
                     [d0, weights, B, h, w, H, W, plane, neighbour](std::span<const double> g) {
                       const auto dv = d0.values();
                       const auto wv = weights.values();
                       std::span<double> gd, gw;
                       if (needs_grad(d0)) gd = grad_buffer(d0);
                       if (needs_grad(weights)) gw = grad_buffer(weights);
                       for (std::int64_t b = 0; b < B; ++b) {
                         for (std::int64_t y = 0; y < h; ++y) {
                           for (std::int64_t x = 0; x < w; ++x) {
                             for (std::int64_t f = 0; f < 16; ++f) {
                               const double go = 4.0 * g[(b * H + 4 * y + f / 4) * W + 4 * x + f % 4];
                               for (int k = 0; k < 9; ++k) {
                                 const auto wi = ((b * 9 + k) * 16 + f) * plane + y * w + x;
                                 const auto di = b * plane + neighbour(y, x, k);
                                 if (!gw.empty()) gw[wi] += go * dv[di];
                                 if (!gd.empty()) gd[di] += go * wv[wi];
                               }
                             }
                           }
                         }
                       }
                     });
}

SuperpixelUpsampler::SuperpixelUpsampler(std::int64_t context_channels, std::int64_t hidden, double slope,
                                         ParamRegistry& reg, std::uint64_t seed, const std::string& prefix)
    : slope_(slope) {
  conv1_ = make_conv2d(reg, prefix + ".conv1", context_channels, hidden, 3, 1, true, seed);
  conv2_ = make_conv2d(reg, prefix + ".conv2", hidden, 9 * 16, 3, 1, true, seed);
}

Tensor SuperpixelUpsampler::weights(const Tensor& ctx_f4) const {
  if (ctx_f4.rank() != 4 || ctx_f4.dim(1) != conv1_.weight.dim(1)) {
    throw ShapeError("superpixel upsample: context must be [B," + std::to_string(conv1_.weight.dim(1)) +
                     ",h,w], got " + shape_str(ctx_f4.shape()));
  }
  Tensor logits = conv2_(leaky_relu(conv1_(ctx_f4), slope_));
  logits = reshape(logits, {ctx_f4.dim(0), 9, 16, ctx_f4.dim(2), ctx_f4.dim(3)});
  return softmax(logits, 1);
}

DisparityMap SuperpixelUpsampler::operator()(const DisparityMap& d0, const Tensor& ctx_f4) const {
  const Tensor& v = d0.values;
  if (v.rank() != 4 || ctx_f4.rank() != 4 || v.dim(0) != ctx_f4.dim(0) || v.dim(2) != ctx_f4.dim(2) ||
      v.dim(3) != ctx_f4.dim(3)) {
    throw ShapeError("superpixel upsample: d0 " + shape_str(v.shape()) + " does not match context " +
                     shape_str(ctx_f4.shape()));
  }
  return {convex_upsample(v, weights(ctx_f4)), Resolution::full};
}

}  // namespace cgistereo
