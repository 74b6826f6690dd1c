#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;

TEST_CASE("top-2 regression matches the full-sort oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor cost = scale(random_uniform({2, 1, 12, 5, 7}, seed), 4.0);
    const auto d0 = top2_regression({cost});
    CHECK(d0.values.shape() == Shape{2, 1, 5, 7});
    CHECK(oracle::max_abs_diff(oracle::top2(cost), d0.values) <= 1e-12);
  }
}

TEST_CASE("top-2 output lies strictly between the selected indices") {
  Tensor cost = scale(random_uniform({1, 1, 9, 6, 6}, 3), 3.0);
  const auto d0 = top2_regression({cost});
  for (std::int64_t p = 0; p < 36; ++p) {
    std::vector<std::pair<double, std::int64_t>> col;
    for (std::int64_t d = 0; d < 9; ++d) col.emplace_back(-cost.values()[d * 36 + p], d);
    std::stable_sort(col.begin(), col.end());
    const auto lo = std::min(col[0].second, col[1].second), hi = std::max(col[0].second, col[1].second);
    CHECK(d0.values.values()[p] > static_cast<double>(lo));
    CHECK(d0.values.values()[p] < static_cast<double>(hi));
  }
}

TEST_CASE("top-2 regression is invariant to a constant cost offset") {
  Tensor cost = random_uniform({1, 1, 8, 4, 4}, 4);
  const auto a = top2_regression({cost});
  const auto b = top2_regression({add(cost, Tensor::full({1, 1, 1, 1, 1}, 3.25))});
  CHECK(oracle::max_abs_diff(a.values, b.values) <= 1e-12);
}

TEST_CASE("top-2 ties resolve toward the smaller index") {
  // values 1, 3, 3, 0 -> picks indices 1 and 2 with equal weight
  const auto d = top2_regression({Tensor::from({1, 1, 4, 1, 1}, {1.0, 3.0, 3.0, 0.0})});
  CHECK(d.values.item() == 1.5);
  CHECK_THROWS_AS(top2_regression({Tensor::zeros({1, 1, 1, 2, 2})}), ShapeError);
}

TEST_CASE("convex upsampling with one-hot centre weights") {
  Tensor d0 = random_uniform({1, 1, 3, 4}, 5, 0, 8);
  std::vector<double> w(9 * 16 * 12, 0.0);
  for (std::int64_t s = 0; s < 16; ++s)
    for (std::int64_t p = 0; p < 12; ++p) w[(4 * 16 + s) * 12 + p] = 1.0;
  const Tensor d1 = convex_upsample(d0, Tensor::from({1, 9, 16, 3, 4}, w));
  CHECK(d1.shape() == Shape{1, 1, 12, 16});
  for (std::int64_t y = 0; y < 12; ++y)
    for (std::int64_t x = 0; x < 16; ++x) CHECK(d1.values()[y * 16 + x] == 4.0 * d0.values()[(y / 4) * 4 + x / 4]);
}

TEST_CASE("convex upsampling stays inside the scaled neighbourhood range") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const std::int64_t h = 3, w = 5;
    Tensor d0 = random_uniform({1, 1, h, w}, 100 + trial, 0, 16);
    Tensor weights = softmax(scale(random_uniform({1, 9, 16, h, w}, 200 + trial), 3.0), 1);
    const Tensor d1 = convex_upsample(d0, weights);
    for (std::int64_t y = 0; y < 4 * h; ++y)
      for (std::int64_t x = 0; x < 4 * w; ++x) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const auto cy = std::clamp<std::int64_t>(y / 4 + dy, 0, h - 1);
            const auto cx = std::clamp<std::int64_t>(x / 4 + dx, 0, w - 1);
            lo = std::min(lo, d0.values()[cy * w + cx]);
            hi = std::max(hi, d0.values()[cy * w + cx]);
          }
        const double v = d1.values()[y * 4 * w + x];
        CHECK(v >= 4 * lo - 1e-12);
        CHECK(v <= 4 * hi + 1e-12);
      }
  }
}

TEST_CASE("superpixel weights are a distribution per fine pixel") {
  ParamRegistry reg;
  SuperpixelUpsampler up(5, 8, 0.2, reg, 1);
  const Tensor w = up.weights(random_uniform({1, 5, 3, 4}, 6));
  CHECK(w.shape() == Shape{1, 9, 16, 3, 4});
  for (std::int64_t s = 0; s < 16 * 12; ++s) {
    double total = 0;
    for (std::int64_t k = 0; k < 9; ++k) {
      const double v = w.values()[k * 16 * 12 + s];
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
  }
  const auto d1 = up({random_uniform({1, 1, 3, 4}, 7, 0, 4)}, random_uniform({1, 5, 3, 4}, 8));
  CHECK(d1.values.shape() == Shape{1, 1, 12, 16});
  CHECK(d1.resolution == Resolution::full);
}
