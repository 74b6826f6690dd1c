#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;

namespace {

FeaturePyramid random_context(std::array<std::int64_t, 3> ch, std::int64_t h4, std::int64_t w4, std::uint64_t seed,
                              std::int64_t batch = 1) {
  FeaturePyramid p;
  p.f4 = random_uniform({batch, 4, h4, w4}, seed);
  p.f8 = random_uniform({batch, ch[0], h4 / 2, w4 / 2}, seed + 1);
  p.f16 = random_uniform({batch, ch[1], h4 / 4, w4 / 4}, seed + 2);
  p.f32 = random_uniform({batch, ch[2], h4 / 8, w4 / 8}, seed + 3);
  return p;
}

CgfConfig positions(const std::string& text, bool detach = false) {
  CgfConfig c;
  c.set_positions(text);
  c.detach_context = detach;
  return c;
}

}  // namespace

TEST_CASE("CGF block matches the scalar composition oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamRegistry reg;
    CgfBlock block(3, 4, 5, 0.2, reg, seed, "cgf");
    Tensor geo = random_uniform({2, 4, 3, 5, 6}, seed + 10);
    Tensor ctx = random_uniform({2, 3, 5, 6}, seed + 20);
    const auto got = block.forward({geo}, ctx, false, NormMode::train);
    const auto want = oracle::cgf(geo, ctx, oracle::CgfParams::from(reg, "cgf"), 0.2);
    CHECK(oracle::max_abs_diff(want.attention, got.attention) <= 1e-10);
    CHECK(oracle::max_abs_diff(want.fused, got.fused.data) <= 1e-10);
  }
}

TEST_CASE("CGF attention lies strictly inside (0,1)") {
  ParamRegistry reg;
  CgfBlock block(3, 4, 3, 0.2, reg, 2, "cgf");
  const auto out = block.forward({random_uniform({1, 4, 2, 4, 4}, 1)}, random_uniform({1, 3, 4, 4}, 2), false,
                                 NormMode::train);
  for (double a : out.attention.values()) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
  CHECK_THROWS_AS(CgfBlock(3, 4, 4, 0.2, reg, 2, "bad"), ShapeError);
  CHECK_THROWS_AS(block.forward({random_uniform({1, 4, 2, 4, 4}, 1)}, random_uniform({1, 3, 4, 5}, 2), false,
                                NormMode::train),
                  ShapeError);
}

TEST_CASE("aggregation shapes for the toy configuration") {
  // C = 8 at quarter resolution of a 64x128 image with 64 candidate disparities
  const std::array<std::int64_t, 3> ctx_ch{6, 7, 9};
  for (const char* pos : {"none", "encoder", "decoder", "encoder,decoder"}) {
    ParamRegistry reg;
    CostAggregation agg(8, ctx_ch, positions(pos), 0.2, reg, 1);
    const auto ctx = random_context(ctx_ch, 16, 32, 3);
    const CostVolume v{random_uniform({1, 8, 16, 16, 32}, 4)};
    const auto pyr = agg.encode(v, ctx, NormMode::train);
    CHECK(pyr.g8.data.shape() == Shape{1, 16, 8, 8, 16});
    CHECK(pyr.g16.data.shape() == Shape{1, 32, 4, 4, 8});
    CHECK(pyr.g32.data.shape() == Shape{1, 48, 2, 2, 4});
    CHECK(agg.decode(pyr, ctx, NormMode::train).data.shape() == Shape{1, 1, 16, 16, 32});
  }
}

TEST_CASE("CGF placement parameter counts") {
  // Symmetric channel plan: the context channels equal the geometry channels.
  const std::array<std::int64_t, 3> ctx_ch{8, 16, 24};
  auto count = [&](const char* pos) {
    ParamRegistry reg;
    CostAggregation agg(4, ctx_ch, positions(pos), 0.2, reg, 1);
    return reg.parameter_count();
  };
  const auto none = count("none"), enc = count("encoder"), dec = count("decoder"), both = count("encoder,decoder");
  CHECK(none < enc);
  CHECK(enc == dec);
  CHECK(dec < both);
  CHECK(both - none == 2 * (enc - none));
}

TEST_CASE("every CGF placement runs forward and backward") {
  const std::array<std::int64_t, 3> ctx_ch{3, 4, 5};
  for (const char* pos : {"none", "encoder", "decoder", "encoder,decoder"}) {
    ParamRegistry reg;
    CostAggregation agg(2, ctx_ch, positions(pos), 0.2, reg, 1);
    const auto ctx = random_context(ctx_ch, 8, 8, 5, 2);
    Tape tape;
    const auto cost = agg({random_uniform({2, 2, 8, 8, 8}, 6)}, ctx, NormMode::train);
    tape.backward(dot_const(cost.data, random_uniform(cost.data.shape(), 7).values()));
    double norm = 0;
    for (const Tensor& p : reg.parameters())
      for (double g : p.grad()) norm += g * g;
    INFO(pos);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("context truncation changes gradients only") {
  const std::array<std::int64_t, 3> ctx_ch{3, 4, 5};
  ParamRegistry reg_a, reg_b;
  CostAggregation plain(2, ctx_ch, positions("encoder,decoder"), 0.2, reg_a, 1);
  CostAggregation cut(2, ctx_ch, positions("encoder,decoder", true), 0.2, reg_b, 1);
  const auto ctx = random_context(ctx_ch, 8, 8, 8, 2);
  const CostVolume v{random_uniform({2, 2, 8, 8, 8}, 9)};
  const Tensor w = random_uniform({2, 1, 8, 8, 8}, 10);
  Tensor out_a, out_b;
  {
    Tape tape;
    out_a = plain(v, ctx, NormMode::train).data;
    tape.backward(dot_const(out_a, w.values()));
  }
  {
    Tape tape;
    out_b = cut(v, ctx, NormMode::train).data;
    tape.backward(dot_const(out_b, w.values()));
  }
  CHECK(std::equal(out_a.values().begin(), out_a.values().end(), out_b.values().begin()));
  const auto ctx_a = context_branch_parameters(reg_a);
  const auto ctx_b = context_branch_parameters(reg_b);
  REQUIRE(ctx_a.size() == 12);
  REQUIRE(ctx_b.size() == 12);
  double live = 0;
  for (const auto& e : ctx_a)
    for (double g : e.tensor.grad()) live += g * g;
  CHECK(live > 0.0);
  for (const auto& e : ctx_b)
    for (double g : e.tensor.grad()) CHECK(g == 0.0);
}

TEST_CASE("positions parsing") {
  CgfConfig c;
  c.set_positions("decoder,encoder");
  CHECK(c.positions_str() == "encoder,decoder");
  c.set_positions("none");
  CHECK(c.positions_str() == "none");
  CHECK_THROWS_AS(c.set_positions("middle"), ShapeError);
}
