#include "cgistereo/diagnostics.hpp"

#include <chrono>

#include "cgistereo/pipeline.hpp"

namespace cgistereo {

namespace {

// Weighted sum with fixed random weights, so every output coordinate matters
// with a different sign and scale.
class Probe {
 public:
  explicit Probe(std::uint64_t seed) : seed_(seed) {}
  Tensor operator()(const Tensor& y) {
    if (weights_.size() != static_cast<std::size_t>(y.numel())) {
      const Tensor w = random_uniform(y.shape(), seed_, -1.0, 1.0);
      weights_.assign(w.values().begin(), w.values().end());
    }
    return dot_const(y, weights_);
  }

 private:
  std::uint64_t seed_;
  std::vector<double> weights_;
};

std::vector<Tensor> params_of(const ParamRegistry& reg) { return reg.parameters(); }

std::vector<Tensor> join(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

FeaturePyramid random_pyramid(std::int64_t batch, std::array<std::int64_t, 4> ch, std::int64_t h4, std::int64_t w4,
                              std::uint64_t seed) {
  FeaturePyramid p;
  p.f4 = random_uniform({batch, ch[0], h4, w4}, mix_seed(seed, "f4"));
  p.f8 = random_uniform({batch, ch[1], h4 / 2, w4 / 2}, mix_seed(seed, "f8"));
  p.f16 = random_uniform({batch, ch[2], h4 / 4, w4 / 4}, mix_seed(seed, "f16"));
  p.f32 = random_uniform({batch, ch[3], h4 / 8, w4 / 8}, mix_seed(seed, "f32"));
  return p;
}

}  // namespace

std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed, double step,
                                            const std::function<void(const BlockCheck&)>& on_block) {
  std::vector<BlockCheck> out;
  GradCheckOptions all;
  all.step = step;
  GradCheckOptions sampled = all;
  sampled.max_coords = 6;
  sampled.seed = seed;

  auto run = [&](const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                 const GradCheckOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    BlockCheck c{name, grad_check(f, wrt, opt), 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_block) on_block(c);
    out.push_back(c);
  };
  auto rnd = [&](Shape s, const std::string& tag, double lo = -1.0, double hi = 1.0) {
    return random_uniform(std::move(s), mix_seed(seed, tag), lo, hi);
  };
  Probe probe(mix_seed(seed, "probe"));
  std::array<Probe, 4> level_probe{Probe(mix_seed(seed, "probe1")), Probe(mix_seed(seed, "probe2")),
                                   Probe(mix_seed(seed, "probe3")), Probe(mix_seed(seed, "probe4"))};
  // Sums of normalized maps are nearly constant, so every level gets its own
  // random weighting.
  auto pyramid_probe = [&](const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& d) {
    return add(add(level_probe[0](a), level_probe[1](b)), add(level_probe[2](c), level_probe[3](d)));
  };

  // Primitives.
  {
    Tensor x = rnd({2, 3, 7, 6}, "c2x"), k = rnd({4, 3, 3, 3}, "c2k"), b = rnd({4}, "c2b");
    run("conv2d", [&] { return probe(conv2d(x, k, b, ConvGeometry::uniform(2, 1))); }, {x, k, b}, all);
  }
  {
    Tensor x = rnd({1, 2, 5, 6}, "ccx"), k = rnd({3, 2, 3, 3}, "cck");
    ConvGeometry g = ConvGeometry::uniform(1, 1);
    g.pad_mode = PadMode::circular;
    run("conv2d_circular", [&] { return probe(conv2d(x, k, std::nullopt, g)); }, {x, k}, all);
  }
  {
    Tensor x = rnd({1, 2, 4, 5, 6}, "c3x"), k = rnd({3, 2, 3, 3, 3}, "c3k"), b = rnd({3}, "c3b");
    ConvGeometry g{{1, 2, 2}, {1, 1, 1}, PadMode::zeros};
    run("conv3d", [&] { return probe(conv3d(x, k, b, g)); }, {x, k, b}, all);
  }
  {
    Tensor x = rnd({1, 3, 3, 3}, "t2x"), k = rnd({3, 2, 4, 4}, "t2k"), b = rnd({2}, "t2b");
    run("conv_transpose2d", [&] { return probe(conv_transpose2d(x, k, b, ConvGeometry::uniform(2, 1))); },
        {x, k, b}, all);
  }
  {
    Tensor x = rnd({1, 2, 2, 2, 3}, "t3x"), k = rnd({2, 3, 4, 4, 4}, "t3k");
    run("conv_transpose3d", [&] { return probe(conv_transpose3d(x, k, std::nullopt, ConvGeometry::uniform(2, 1))); },
        {x, k}, all);
  }
  {
    Tensor a = rnd({2, 3, 4}, "ea"), b = rnd({1, 3, 1}, "eb");
    run("add_sub_mul_broadcast", [&] { return probe(mul(add(a, b), sub(a, scale(b, 0.5)))); }, {a, b}, all);
  }
  {
    Tensor x = rnd({3, 5}, "sg", -3.0, 3.0);
    run("sigmoid", [&] { return probe(sigmoid(sigmoid(x))); }, {x}, all);
    run("leaky_relu", [&] { return probe(leaky_relu(x, 0.1)); }, {x}, all);
  }
  {
    Tensor x = rnd({2, 3, 1, 4}, "sh"), y = rnd({2, 2, 5, 4}, "sh2");
    run("expand_concat_narrow_reshape",
        [&] {
          Tensor e = expand(x, 2, 5);
          Tensor c = concat({e, y}, 1);
          Tensor n = narrow(c, 2, 1, 3);
          return probe(reshape(n, {2, 5, 12}));
        },
        {x, y}, all);
    run("insert_axis_expand", [&] { return probe(expand(y, 2, 3, true)); }, {y}, all);
  }
  {
    Tensor x = rnd({2, 5, 3}, "sm", -4.0, 4.0);
    run("softmax", [&] { return probe(softmax(x, 1)); }, {x}, all);
    run("sum_mean", [&] { return add(scale(sum(x), 0.3), mean(mul(x, x))); }, {x}, all);
  }
  {
    Tensor x = rnd({3, 2, 4, 2}, "bn"), gamma = rnd({2}, "bng", 0.5, 1.5), beta = rnd({2}, "bnb");
    BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
    run("batch_norm_train", [&] { return probe(batch_norm(x, gamma, beta, st, NormMode::train)); }, {x, gamma, beta},
        all);
    BatchNormState ev{rnd({2}, "bnm"), rnd({2}, "bnv", 0.5, 2.0)};
    run("batch_norm_eval", [&] { return probe(batch_norm(x, gamma, beta, ev, NormMode::eval)); }, {x, gamma, beta},
        all);
  }

  // Pipeline blocks.
  {
    BackboneConfig cfg;
    cfg.stem_channels = 3;
    cfg.channels = {3, 4, 4, 5};
    cfg.blocks_per_stage = 2;
    cfg.seed = seed;
    ParamRegistry reg;
    Backbone bb(cfg, reg);
    Tensor img = rnd({2, 3, 128, 128}, "bbimg", 0.0, 1.0);
    run("backbone_extract",
        [&] {
          auto p = bb.extract(img, NormMode::train);
          return pyramid_probe(p.f4, p.f8, p.f16, p.f32);
        },
        join({img}, params_of(reg)), sampled);
    auto base = [&] {
      NoGradGuard ng;
      return bb.extract(img, NormMode::train);
    }();
    FeaturePyramid leaves{base.f4.clone(), base.f8.clone(), base.f16.clone(), base.f32.clone()};
    run("backbone_merge",
        [&] {
          auto p = bb.merge_upsample(leaves, NormMode::train);
          return pyramid_probe(p.f4, p.f8, p.f16, p.f32);
        },
        join({leaves.f4, leaves.f8, leaves.f16, leaves.f32}, params_of(reg)), sampled);
  }
  MatchingConfig mc;
  mc.max_disparity = 16;
  mc.corr_channels = 3;
  {
    Tensor fl = rnd({1, 8, 3, 8}, "cl"), fr = rnd({1, 8, 3, 8}, "cr");
    run("correlation", [&] { return probe(build_correlation(fl, fr, mc).data); }, {fl, fr}, all);
  }
  {
    ParamRegistry reg;
    CorrelationLift lift(mc, reg, 0.1, seed);
    Tensor v = rnd({1, 1, 4, 3, 6}, "lv");
    run("correlation_lift", [&] { return probe(lift({v, 4.0, Resolution::quarter}, NormMode::train).data); },
        join({v}, params_of(reg)), all);
  }
  {
    ParamRegistry reg;
    AttentionFeatureVolume afv(4, mc, reg, seed);
    Tensor a = rnd({1, 3, 4, 3, 5}, "aa"), f = rnd({1, 4, 3, 5}, "af");
    run("attention_feature_volume", [&] { return probe(afv({a, 4.0, Resolution::quarter}, f).data); },
        join({a, f}, params_of(reg)), all);
  }
  {
    ParamRegistry reg;
    CgfBlock cgf(5, 3, 5, 0.1, reg, seed, "cgf");
    Tensor g = rnd({2, 3, 3, 4, 4}, "gg"), c = rnd({2, 5, 4, 4}, "gc");
    run("cgf",
        [&] {
          auto o = cgf.forward({g, 8.0, Resolution::eighth}, c, false, NormMode::train);
          return add(probe(o.fused.data), mean(o.attention));
        },
        join({g, c}, params_of(reg)), sampled);
  }
  {
    CgfConfig cfg;
    cfg.in_encoder = cfg.in_decoder = true;
    cfg.fusion_kernel = 3;
    ParamRegistry reg;
    CostAggregation agg(2, {3, 3, 4}, cfg, 0.1, reg, seed);
    auto ctx = random_pyramid(2, {2, 3, 3, 4}, 32, 32, mix_seed(seed, "ctx"));
    Tensor v = rnd({2, 2, 8, 32, 32}, "av");
    std::vector<Tensor> enc_params, dec_params;
    for (const auto& e : reg.entries()) {
      if (e.kind != ParamKind::parameter) continue;
      const bool enc = e.name.find(".down") != std::string::npos || e.name.find("encoder_cgf") != std::string::npos;
      (enc ? enc_params : dec_params).push_back(e.tensor);
    }
    run("encoder",
        [&] {
          auto p = agg.encode({v, 4.0, Resolution::quarter}, ctx, NormMode::train);
          return pyramid_probe(p.g4.data, p.g8.data, p.g16.data, p.g32.data);
        },
        join(join({v, ctx.f8, ctx.f16, ctx.f32}, enc_params), {}), sampled);
    auto pyr = [&] {
      NoGradGuard ng;
      return agg.encode({v, 4.0, Resolution::quarter}, ctx, NormMode::train);
    }();
    GeometryPyramid leaves{{pyr.g4.data.clone(), 4.0, Resolution::quarter},
                           {pyr.g8.data.clone(), 8.0, Resolution::eighth},
                           {pyr.g16.data.clone(), 16.0, Resolution::sixteenth},
                           {pyr.g32.data.clone(), 32.0, Resolution::thirtysecond}};
    run("decoder", [&] { return probe(agg.decode(leaves, ctx, NormMode::train).data); },
        join({leaves.g4.data, leaves.g8.data, leaves.g16.data, leaves.g32.data, ctx.f8, ctx.f16, ctx.f32},
             dec_params),
        sampled);
  }
  {
    Tensor cost = rnd({2, 1, 5, 3, 4}, "tc", -2.0, 2.0);
    run("top2_regression", [&] { return probe(top2_regression({cost, 4.0, Resolution::quarter}).values); }, {cost},
        all);
  }
  {
    Tensor d0 = rnd({1, 1, 3, 4}, "ud", 0.0, 3.0), w = rnd({1, 9, 16, 3, 4}, "uw");
    run("convex_upsample", [&] { return probe(convex_upsample(d0, softmax(w, 1))); }, {d0, w}, all);
    ParamRegistry reg;
    SuperpixelUpsampler up(4, 4, 0.1, reg, seed);
    Tensor ctx = rnd({1, 4, 3, 4}, "uc");
    run("superpixel_upsampler",
        [&] { return probe(up({d0, Resolution::quarter}, ctx).values); }, join({d0, ctx}, params_of(reg)), sampled);
  }
  {
    Tensor d0 = rnd({1, 1, 2, 3}, "ld0", 0.0, 4.0), d1 = rnd({1, 1, 8, 12}, "ld1", 0.0, 16.0);
    Tensor gt = rnd({1, 1, 8, 12}, "lgt", 0.0, 16.0);
    Tensor mask = valid_mask(rnd({1, 1, 8, 12}, "lm", -0.5, 1.0), 2.0);
    run("loss", [&] { return total_loss(d0, d1, gt, mask, LossWeights{}); }, {d0, d1}, all);
  }
  {
    ModelConfig mcfg;
    mcfg.backbone.stem_channels = 3;
    mcfg.backbone.channels = {4, 4, 5, 5};
    mcfg.backbone.seed = seed;
    mcfg.matching.max_disparity = 16;
    mcfg.matching.corr_channels = 2;
    mcfg.cgf.in_encoder = mcfg.cgf.in_decoder = true;
    mcfg.upsample_hidden = 4;
    mcfg.seed = seed;
    {
      // Images to loss through every block at the single-image shape.
      StereoModel model(mcfg);
      Tensor left = rnd({1, 3, 32, 64}, "pl", 0.0, 1.0), right = rnd({1, 3, 32, 64}, "pr", 0.0, 1.0);
      Tensor gt = rnd({1, 1, 32, 64}, "pg", 0.5, 15.0);
      Tensor mask = valid_mask(gt, 16.0);
      GradCheckOptions opt = sampled;
      opt.max_coords = 48;
      run("full_pipeline_inputs",
          [&] {
            auto o = model.forward(left, right, NormMode::train);
            return total_loss(o.d0.values, o.d1.values, gt, mask, mcfg.loss);
          },
          {left, right}, opt);
    }
    {
      // Every parameter, with two images so the coarsest level holds enough
      // values per channel for batch statistics.
      StereoModel model(mcfg);
      Tensor left = rnd({2, 3, 32, 64}, "pl", 0.0, 1.0), right = rnd({2, 3, 32, 64}, "pr", 0.0, 1.0);
      Tensor gt = rnd({2, 1, 32, 64}, "pg", 0.5, 15.0);
      Tensor mask = valid_mask(gt, 16.0);
      GradCheckOptions opt = sampled;
      opt.max_coords = 2;
      run("full_pipeline_parameters",
          [&] {
            auto o = model.forward(left, right, NormMode::train);
            return total_loss(o.d0.values, o.d1.values, gt, mask, mcfg.loss);
          },
          model.registry().parameters(), opt);
    }
  }
  return out;
}

}  // namespace cgistereo
