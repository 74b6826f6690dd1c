#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.stem_channels = 4;
  c.channels = {6, 8, 10, 12};
  return c;
}

}  // namespace

TEST_CASE("backbone shape contract") {
  ParamRegistry reg;
  Backbone net(small_backbone(), reg);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{32, 64}, {64, 128}, {96, 32}}) {
    const auto p = net(random_uniform({2, 3, h, w}, 1, 0, 1), NormMode::train);
    const std::int64_t ch[] = {6, 8, 10, 12};
    for (int l = 0; l < 4; ++l) {
      const std::int64_t s = 4 << l;
      CHECK(p.level(l).shape() == Shape{2, ch[l], h / s, w / s});
    }
  }
  CHECK_THROWS_AS(net.extract(random_uniform({1, 3, 48, 64}, 1), NormMode::train), ShapeError);
  CHECK_THROWS_AS(net.extract(random_uniform({1, 1, 32, 64}, 1), NormMode::train), ShapeError);
}

TEST_CASE("merge path is linear before activation") {
  ParamRegistry reg;
  Backbone net(small_backbone(), reg);
  for (const auto& e : reg.parameters_with_prefix("backbone.merge")) {
    Tensor t = e.tensor;
    for (auto& v : t.mutable_values()) v = 0.0;
  }
  const auto p = net(random_uniform({1, 3, 64, 64}, 2, 0, 1), NormMode::train);
  for (int l = 0; l < 4; ++l) {
    for (double v : p.level(l).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("every backbone parameter is reached from f4") {
  BackboneConfig cfg = small_backbone();
  cfg.blocks_per_stage = 2;
  ParamRegistry reg;
  Backbone net(cfg, reg);
  for (Tensor p : reg.parameters()) p.zero_grad();
  Tensor img = random_uniform({2, 3, 64, 64}, 3, 0, 1);
  Tape tape;
  const auto p = net(img, NormMode::train);
  Tensor w = random_uniform(p.f4.shape(), 4);
  tape.backward(dot_const(p.f4, w.values()));
  for (const auto& e : reg.entries()) {
    if (e.kind != ParamKind::parameter) continue;
    double norm = 0;
    for (double g : e.tensor.grad()) norm += g * g;
    INFO(e.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("circular-padded backbone commutes with 32-pixel shifts") {
  BackboneConfig cfg = small_backbone();
  cfg.circular_padding = true;
  ParamRegistry reg;
  Backbone net(cfg, reg);
  const std::int64_t H = 64, W = 128;
  Tensor img = random_uniform({1, 3, H, W}, 5, 0, 1);
  std::vector<double> shifted(static_cast<std::size_t>(img.numel()));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        shifted[(c * H + y) * W + (x + 32) % W] = img.values()[(c * H + y) * W + x];
  const Tensor a = net.extract(img, NormMode::eval).f32;
  const Tensor b = net.extract(Tensor::from(img.shape(), shifted), NormMode::eval).f32;
  const std::int64_t C = a.dim(1), h = a.dim(2), w = a.dim(3);
  double worst = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        worst = std::max(worst, std::abs(b.values()[(c * h + y) * w + (x + 1) % w] - a.values()[(c * h + y) * w + x]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("backbone config validation") {
  BackboneConfig c;
  c.channels[2] = 0;
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c = {};
  c.leaky_slope = 1.5;
  CHECK_THROWS_AS(c.validate(), ShapeError);
}
