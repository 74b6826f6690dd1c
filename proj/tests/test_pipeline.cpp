#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"

using namespace cgistereo;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone.stem_channels = 4;
  m.backbone.channels = {6, 6, 8, 8};
  m.matching.max_disparity = 16;
  m.matching.corr_channels = 2;
  m.upsample_hidden = 4;
  return m;
}

Batch tiny_batch(std::uint64_t seed, std::int64_t maxd = 16) {
  return make_batch({synth_stereo(seed, 32, 64, maxd, {})}, static_cast<double>(maxd));
}

std::vector<double> snapshot(const ParamRegistry& reg) {
  std::vector<double> out;
  for (const auto& e : reg.entries()) out.insert(out.end(), e.tensor.values().begin(), e.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("toy configuration shape contract") {
  ModelConfig cfg;  // C = 8, max disparity 64
  StereoModel model(cfg);
  const auto s = synth_stereo(1, 64, 128, 64, {});
  NoGradGuard no_grad;
  const auto out = model.forward(s.left, s.right, NormMode::train);
  CHECK(out.cost.data.shape() == Shape{1, 1, 16, 16, 32});
  CHECK(out.d0.values.shape() == Shape{1, 1, 16, 32});
  CHECK(out.d1.values.shape() == Shape{1, 1, 64, 128});
  CHECK(model.parameter_count() == 1098217);
}

TEST_CASE("model rejects mismatched inputs") {
  StereoModel model(tiny_model());
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 32, 64}), Tensor::zeros({1, 3, 32, 96}), NormMode::eval),
                  ShapeError);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 32, 48}), Tensor::zeros({1, 3, 32, 48}), NormMode::eval),
                  ShapeError);
  ModelConfig bad = tiny_model();
  bad.matching.max_disparity = 18;
  CHECK_THROWS_AS(StereoModel{bad}, ShapeError);
}

TEST_CASE("forward is deterministic") {
  StereoModel a(tiny_model()), b(tiny_model());
  const auto batch = tiny_batch(2);
  NoGradGuard no_grad;
  const auto da = a.forward(batch.left, batch.right, NormMode::eval).d1.values;
  const auto db = b.forward(batch.left, batch.right, NormMode::eval).d1.values;
  CHECK(oracle::max_abs_diff(da, db) == 0.0);
}

TEST_CASE("Adam matches the scalar recurrence") {
  Tensor p = random_uniform({5}, 1);
  p.set_requires_grad();
  std::vector<double> ref(p.values().begin(), p.values().end());
  std::vector<oracle::AdamScalar> scalar(5);
  OptimState st;
  st.base_lr = 0.01;
  st.decay_steps = {3};
  for (std::int64_t t = 1; t <= 5; ++t) {
    p.zero_grad();
    Tape tape;
    tape.backward(sum(mul(mul(p, p), p)));  // grad 3 p^2
    for (std::size_t i = 0; i < 5; ++i) {
      const double g = 3 * ref[i] * ref[i];
      ref[i] = scalar[i].update(ref[i], g, t, t <= 3 ? 0.01 : 0.005);
    }
    adam_update({p}, st);
  }
  CHECK(st.step == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(p.values()[i] - ref[i]) <= 1e-15);
}

TEST_CASE("learning-rate schedule") {
  OptimState st;
  st.decay_steps = {300, 400};
  CHECK(st.lr_at(0) == 1e-3);
  CHECK(st.lr_at(299) == 1e-3);
  CHECK(st.lr_at(300) == 5e-4);
  CHECK(st.lr_at(450) == 2.5e-4);
}

TEST_CASE("zero learning rate leaves weights bit-identical") {
  StereoModel model(tiny_model());
  const auto params_before = snapshot(model.registry());
  OptimState st;
  st.base_lr = 0.0;
  const double loss = train_step(model, st, tiny_batch(3));
  CHECK(std::isfinite(loss));
  const auto after = snapshot(model.registry());
  // BatchNorm running stats move; parameters do not.
  std::size_t k = 0;
  for (const auto& e : model.registry().entries()) {
    for (std::int64_t i = 0; i < e.tensor.numel(); ++i, ++k) {
      if (e.kind == ParamKind::parameter) CHECK(after[k] == params_before[k]);
    }
  }
}

TEST_CASE("non-finite loss leaves the model untouched") {
  StereoModel model(tiny_model());
  auto batch = tiny_batch(4);
  std::vector<double> poisoned(batch.left.values().begin(), batch.left.values().end());
  poisoned[10] = std::numeric_limits<double>::quiet_NaN();
  batch.left = Tensor::from(batch.left.shape(), poisoned);
  const auto before = snapshot(model.registry());
  OptimState st;
  CHECK_THROWS_AS(train_step(model, st, batch), NonFiniteLoss);
  CHECK(st.step == 0);
  const auto after = snapshot(model.registry());
  std::size_t k = 0;
  for (const auto& e : model.registry().entries()) {
    for (std::int64_t i = 0; i < e.tensor.numel(); ++i, ++k) {
      if (e.kind == ParamKind::parameter) CHECK(after[k] == before[k]);
    }
  }
}

TEST_CASE("training reduces the loss on a fixed batch") {
  StereoModel model(tiny_model());
  const auto batch = tiny_batch(5);
  OptimState st;
  const double first = train_step(model, st, batch);
  double last = first;
  for (int i = 0; i < 15; ++i) last = train_step(model, st, batch);
  CHECK(last < first);
}

TEST_CASE("checkpoint roundtrip reproduces the forward pass") {
  StereoModel model(tiny_model());
  OptimState st;
  for (int i = 0; i < 2; ++i) train_step(model, st, tiny_batch(6 + i));
  const auto batch = tiny_batch(9);
  Tensor before;
  {
    NoGradGuard g;
    before = model.forward(batch.left, batch.right, NormMode::eval).d1.values;
  }
  const std::string bytes = serialize_checkpoint(model.registry());
  StereoModel fresh(tiny_model());
  load_checkpoint(fresh.registry(), bytes);
  NoGradGuard g;
  const auto after = fresh.forward(batch.left, batch.right, NormMode::eval).d1.values;
  CHECK(oracle::max_abs_diff(before, after) == 0.0);
  CHECK(serialize_checkpoint(fresh.registry()) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected without side effects") {
  StereoModel model(tiny_model());
  const std::string good = serialize_checkpoint(model.registry());
  StereoModel target(tiny_model());
  const auto before = snapshot(target.registry());
  CHECK_THROWS_AS(load_checkpoint(target.registry(), "XXXXXXXX"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(target.registry(), good.substr(0, good.size() - 3)), FormatError);
  CHECK_THROWS_AS(load_checkpoint(target.registry(), good + "x"), FormatError);
  ModelConfig other = tiny_model();
  other.upsample_hidden = 5;
  StereoModel different(other);
  CHECK_THROWS_AS(load_checkpoint(target.registry(), serialize_checkpoint(different.registry())), FormatError);
  CHECK(snapshot(target.registry()) == before);
}

TEST_CASE("data seed does not touch initialization") {
  RunConfig a, b;
  b.train.data_seed = 77;
  StereoModel ma(a.model), mb(b.model);
  CHECK(snapshot(ma.registry()) == snapshot(mb.registry()));
  CHECK(oracle::max_abs_diff(training_sample(a.train, 64, 0).left, training_sample(b.train, 64, 0).left) > 0);
  ModelConfig reseeded;
  reseeded.seed = 2;
  reseeded.backbone.seed = 2;
  StereoModel mc(reseeded);
  CHECK(snapshot(ma.registry()) != snapshot(mc.registry()));
}

TEST_CASE("ablation axes expose every row") {
  const ModelConfig base;
  auto names = [&](AblationAxis axis) {
    std::vector<std::string> n;
    for (const auto& r : ablation_configs(base, axis)) n.push_back(r.name);
    return n;
  };
  CHECK(names(AblationAxis::afv) == std::vector<std::string>{"baseline", "AFV", "CGF", "AFV+CGF"});
  CHECK(names(AblationAxis::cgf_position) ==
        std::vector<std::string>{"none", "encoder", "decoder", "encoder+decoder"});
  CHECK(names(AblationAxis::detach) == std::vector<std::string>{"no truncation", "truncating gradient"});
  CHECK_THROWS_AS(parse_axis("depth"), ShapeError);
  CHECK(axis_name(parse_axis("cgf_position")) == "cgf_position");
}

TEST_CASE("every ablation configuration runs forward and backward at toy size") {
  const ModelConfig base;
  const auto s = synth_stereo(1, 64, 128, 64, {});
  const Batch batch = make_batch({s}, 64.0);
  for (AblationAxis axis : {AblationAxis::afv, AblationAxis::cgf_position, AblationAxis::detach}) {
    for (const auto& row : ablation_configs(base, axis)) {
      StereoModel model(row.config);
      Tape tape;
      const auto out = model.forward(batch.left, batch.right, NormMode::train);
      const Tensor loss = total_loss(out.d0.values, out.d1.values, batch.disparity, batch.mask, row.config.loss);
      tape.backward(loss);
      INFO(row.name);
      CHECK(std::isfinite(loss.item()));
    }
  }
}

TEST_CASE("run-config text roundtrip") {
  RunConfig cfg;
  cfg.model.backbone.channels = {8, 12, 16, 20};
  cfg.model.cgf.set_positions("encoder,decoder");
  cfg.model.loss.lambda0 = 0.1 + 0.2;
  cfg.train.decay_steps = {100, 200};
  cfg.train.data_mode = SynthSpec::parse("constant:3.25");
  const auto parsed = parse_run_config(format_run_config(cfg));
  CHECK(parsed.unknown_keys.empty());
  CHECK(config_entries(parsed.config) == config_entries(cfg));
  CHECK(parsed.config.model.loss.lambda0 == cfg.model.loss.lambda0);

  const auto with_unknown = parse_run_config("# comment\nseed = 3\nfoo.bar = 1\n");
  CHECK(with_unknown.config.model.seed == 3);
  CHECK(with_unknown.unknown_keys == std::vector<std::string>{"foo.bar"});
  CHECK_THROWS_AS(parse_run_config("seed 3\n"), ShapeError);
  CHECK_THROWS_AS(parse_run_config("train.steps = many\n"), ShapeError);
}
