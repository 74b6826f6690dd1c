#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;

namespace {

Tensor map(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from({1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST_CASE("metrics on perfect prediction") {
  Tensor gt = random_uniform({1, 1, 8, 8}, 1, 1, 60);
  const auto r = evaluate(gt, gt, Tensor::full(gt.shape(), 1.0));
  CHECK(r.epe_px == 0.0);
  CHECK(r.d1_percent == 0.0);
  CHECK(r.gt1_percent == 0.0);
  CHECK(r.gt2_percent == 0.0);
  CHECK(r.gt3_percent == 0.0);
  CHECK(r.valid_pixel_count == 64);
}

TEST_CASE("uniform unit error sits on the strict thresholds") {
  // quarter-pixel values keep gt + 1 exact
  std::vector<double> q;
  for (double x : random_uniform({16}, 2, 5, 50).values()) q.push_back(std::round(x * 4.0) / 4.0);
  const Tensor gt = Tensor::from({1, 1, 4, 4}, q);
  const auto r = evaluate(add(gt, Tensor::full({1, 1, 1, 1}, 1.0)), gt, Tensor::full(gt.shape(), 1.0));
  CHECK(r.epe_px == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.gt1_percent == 0.0);
  CHECK(r.gt2_percent == 0.0);
}

TEST_CASE("D1 outlier rule uses max(3, 5 percent of gt)") {
  const auto r = evaluate(map({103.5}), map({100.0}), map({1.0}));
  CHECK(r.d1_percent == 0.0);
  CHECK(r.gt3_percent == 100.0);
  CHECK(r.epe_px == 3.5);
  // small disparities fall back to the 3 px floor
  const auto s = evaluate(map({13.5}), map({10.0}), map({1.0}));
  CHECK(s.d1_percent == 100.0);
}

TEST_CASE("metrics ignore masked pixels and pixel order") {
  Tensor gt = random_uniform({1, 1, 1, 40}, 3, 1, 60);
  Tensor pred = random_uniform({1, 1, 1, 40}, 4, 1, 60);
  Tensor mask = Tensor::from({1, 1, 1, 40}, [] {
    std::vector<double> m(40);
    for (int i = 0; i < 40; ++i) m[i] = i % 3 == 0 ? 0.0 : 1.0;
    return m;
  }());
  const auto base = evaluate(pred, gt, mask);
  std::vector<double> p2(pred.values().begin(), pred.values().end());
  for (int i = 0; i < 40; i += 3) p2[i] += 1000.0;
  const auto perturbed = evaluate(map(p2), gt, mask);
  CHECK(perturbed.epe_px == base.epe_px);
  CHECK(perturbed.d1_percent == base.d1_percent);

  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = (i * 7) % 40;
  std::vector<double> pp(40), gp(40), mp(40);
  for (std::size_t i = 0; i < 40; ++i) {
    pp[i] = pred.values()[perm[i]];
    gp[i] = gt.values()[perm[i]];
    mp[i] = mask.values()[perm[i]];
  }
  const auto shuffled = evaluate(map(pp), map(gp), map(mp));
  CHECK(shuffled.epe_px == doctest::Approx(base.epe_px).epsilon(1e-14));
  CHECK(shuffled.gt2_percent == base.gt2_percent);
  CHECK(base.d1_percent <= base.gt3_percent);
}

TEST_CASE("empty mask yields an undefined report") {
  const auto r = evaluate(map({1.0}), map({2.0}), map({0.0}));
  CHECK_FALSE(r.defined());
  CHECK(r.to_line().find("nan") != std::string::npos);
}

TEST_CASE("aggregate is pixel weighted") {
  MetricsReport a, b;
  a.epe_px = 1.0, a.valid_pixel_count = 10;
  b.epe_px = 4.0, b.valid_pixel_count = 30;
  CHECK(aggregate({a, b}).epe_px == doctest::Approx(3.25));
  CHECK(aggregate({a, b}).valid_pixel_count == 40);
}

TEST_CASE("valid mask rule") {
  const Tensor m = valid_mask(map({0.0, 0.5, 31.9, 32.0, -1.0}), 32.0);
  CHECK(std::vector<double>(m.values().begin(), m.values().end()) == std::vector<double>{0, 1, 1, 0, 0});
}

TEST_CASE("smooth L1 closed form") {
  // errors 0.5 (quadratic branch) and 3 (linear branch), beta 1
  const Tensor l = smooth_l1(map({1.5, 7.0, 100.0}), map({1.0, 4.0, 0.0}), map({1.0, 1.0, 0.0}), 1.0);
  CHECK(l.item() == doctest::Approx((0.125 + 2.5) / 2.0).epsilon(1e-14));
}

TEST_CASE("x4 disparity upsampling scales values") {
  const Tensor up = upsample_disparity_x4(Tensor::full({1, 1, 2, 3}, 2.5));
  CHECK(up.shape() == Shape{1, 1, 8, 12});
  for (double v : up.values()) CHECK(v == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("replacing predictions with ground truth never increases the loss") {
  Tensor gt = random_uniform({1, 1, 8, 8}, 5, 1, 30);
  Tensor mask = valid_mask(gt, 32);
  Tensor d0 = random_uniform({1, 1, 2, 2}, 6, 0, 8);
  Tensor d1 = random_uniform({1, 1, 8, 8}, 7, 0, 32);
  const LossWeights w;
  const double base = total_loss(d0, d1, gt, mask, w).item();
  std::vector<double> v1(d1.values().begin(), d1.values().end());
  for (std::size_t i = 0; i < v1.size(); i += 2) v1[i] = gt.values()[i];
  const double partial = total_loss(d0, Tensor::from(d1.shape(), v1), gt, mask, w).item();
  CHECK(partial <= base);
  const double full = total_loss(d0, gt, gt, mask, w).item();
  CHECK(full <= partial);
  // loss weights: lambda0 on the upsampled d0 term, lambda1 on d1
  const double t0 = smooth_l1(upsample_disparity_x4(d0), gt, mask, 1.0).item();
  const double t1 = smooth_l1(d1, gt, mask, 1.0).item();
  CHECK(base == doctest::Approx(0.3 * t0 + 1.0 * t1).epsilon(1e-14));
}
