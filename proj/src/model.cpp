#include <cmath>

#include "cgistereo/pipeline.hpp"

namespace cgistereo {

void ModelConfig::validate() const {
  backbone.validate();
  matching.validate();
  cgf.validate();
  loss.validate();
  if (upsample_hidden < 1) throw ShapeError("model: upsample hidden width must be >= 1");
}

StereoModel::StereoModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const double slope = cfg_.backbone.leaky_slope;
  const auto& ch = cfg_.backbone.channels;
  backbone_ = std::make_unique<Backbone>(cfg_.backbone, reg_);
  lift_ = std::make_unique<CorrelationLift>(cfg_.matching, reg_, slope, cfg_.seed);
  if (cfg_.afv_enabled) afv_ = std::make_unique<AttentionFeatureVolume>(ch[0], cfg_.matching, reg_, cfg_.seed);
  aggregation_ = std::make_unique<CostAggregation>(cfg_.matching.corr_channels,
                                                   std::array<std::int64_t, 3>{ch[1], ch[2], ch[3]}, cfg_.cgf, slope,
                                                   reg_, cfg_.seed);
  upsampler_ = std::make_unique<SuperpixelUpsampler>(ch[0], cfg_.upsample_hidden, slope, reg_, cfg_.seed);
}

StereoModel::Output StereoModel::forward(const Tensor& left, const Tensor& right, NormMode mode) {
  if (left.shape() != right.shape()) {
    throw ShapeError("model: left " + shape_str(left.shape()) + " and right " + shape_str(right.shape()) +
                     " images differ in shape");
  }
  if (left.rank() != 4) throw ShapeError("model: images must be [B,3,H,W]");
  if (cfg_.matching.quarter_disparities() > left.dim(3) / 4) {
    throw ShapeError("model: max_disparity " + std::to_string(cfg_.matching.max_disparity) +
                     " exceeds image width " + std::to_string(left.dim(3)));
  }
  FeaturePyramid fl = (*backbone_)(left, mode);
  FeaturePyramid fr = (*backbone_)(right, mode);
  CostVolume corr = build_correlation(fl.f4, fr.f4, cfg_.matching);
  CostVolume volume = (*lift_)(corr, mode);
  if (afv_) volume = (*afv_)(volume, fl.f4);
  CostVolume cost = (*aggregation_)(volume, fl, mode);
  DisparityMap d0 = top2_regression(cost);
  DisparityMap d1 = (*upsampler_)(d0, fl.f4);
  return {d0, d1, cost};
}

Batch make_batch(const std::vector<StereoSample>& samples, double max_disparity) {
  if (samples.empty()) throw ShapeError("batch: no samples");
  std::vector<Tensor> l, r, d;
  for (const auto& s : samples) {
    l.push_back(s.left);
    r.push_back(s.right);
    d.push_back(s.disparity);
  }
  NoGradGuard no_grad;
  Batch b;
  b.left = concat(l, 0);
  b.right = concat(r, 0);
  b.disparity = concat(d, 0);
  b.mask = valid_mask(b.disparity, max_disparity);
  return b;
}

double OptimState::lr_at(std::int64_t step_index) const {
  double lr = base_lr;
  for (auto s : decay_steps) {
    if (step_index >= s) lr *= decay_factor;
  }
  return lr;
}

void adam_update(const std::vector<Tensor>& params, OptimState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw std::logic_error("adam: parameter list changed");
  const double lr = state.lr_at(state.step);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != static_cast<std::size_t>(p.numel())) throw std::logic_error("adam: moment shape mismatch");
    const auto g = p.grad_view();
    auto x = p.mutable_values();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      x[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double train_step(StereoModel& model, OptimState& optim, const Batch& batch) {
  const auto params = model.registry().parameters();
  for (Tensor p : params) p.zero_grad();
  Tape tape;
  auto out = model.forward(batch.left, batch.right, NormMode::train);
  Tensor loss = total_loss(out.d0.values, out.d1.values, batch.disparity, batch.mask, model.config().loss);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("train step " + std::to_string(optim.step) + ": non-finite loss, update rejected");
  }
  tape.backward(loss);
  adam_update(params, optim);
  for (Tensor p : params) p.zero_grad();
  return value;
}

void TrainConfig::validate() const {
  if (steps < 0) throw ShapeError("train: steps must be >= 0");
  if (lr < 0.0) throw ShapeError("train: lr must be >= 0");
  if (batch_size < 1) throw ShapeError("train: batch_size must be >= 1");
  if (height % 32 != 0 || width % 32 != 0 || height <= 0 || width <= 0) {
    throw ShapeError("train: height and width must be positive multiples of 32");
  }
  if (eval_samples < 0) throw ShapeError("train: eval_samples must be >= 0");
}

StereoSample training_sample(const TrainConfig& cfg, std::int64_t max_disparity, std::int64_t index) {
  return synth_stereo(mix_seed(cfg.data_seed, "train" + std::to_string(index)), cfg.height, cfg.width,
                      max_disparity, cfg.data_mode);
}

std::vector<StereoSample> evaluation_set(const TrainConfig& cfg, std::int64_t max_disparity) {
  std::vector<StereoSample> out;
  for (std::int64_t i = 0; i < cfg.eval_samples; ++i) {
    out.push_back(synth_stereo(mix_seed(cfg.eval_seed, "eval" + std::to_string(i)), cfg.height, cfg.width,
                               max_disparity, cfg.data_mode));
  }
  return out;
}

std::vector<TrainLogEntry> train_model(StereoModel& model, const TrainConfig& cfg,
                                       const std::function<void(const TrainLogEntry&)>& on_step) {
  cfg.validate();
  OptimState optim;
  optim.base_lr = cfg.lr;
  optim.decay_steps = cfg.decay_steps;
  optim.decay_factor = cfg.decay_factor;
  const auto max_d = model.config().matching.max_disparity;
  std::vector<TrainLogEntry> log;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<StereoSample> samples;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      samples.push_back(training_sample(cfg, max_d, step * cfg.batch_size + b));
    }
    const double lr = optim.lr_at(optim.step);
    const double loss = train_step(model, optim, make_batch(samples, static_cast<double>(max_d)));
    log.push_back({step, loss, lr});
    if (on_step) on_step(log.back());
  }
  return log;
}

MetricsReport evaluate_model(StereoModel& model, const std::vector<StereoSample>& samples) {
  NoGradGuard no_grad;
  std::vector<MetricsReport> reports;
  const double max_d = static_cast<double>(model.config().matching.max_disparity);
  for (const auto& s : samples) {
    auto out = model.forward(s.left, s.right, NormMode::eval);
    reports.push_back(evaluate(out.d1.values, s.disparity, valid_mask(s.disparity, max_d)));
  }
  return aggregate(reports);
}

}  // namespace cgistereo
