#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "cgistereo/cgf.hpp"
#include "cgistereo/data_io.hpp"
#include "cgistereo/loss_metrics.hpp"

namespace cgistereo {

struct ModelConfig {
  BackboneConfig backbone;
  MatchingConfig matching;
  CgfConfig cgf;
  bool afv_enabled = true;
  LossWeights loss;
  std::int64_t upsample_hidden = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Full pipeline: shared backbone on both views, cosine correlation, lift,
/// optional AFV, encoder/decoder aggregation, top-2 regression and superpixel
/// upsampling.
class StereoModel {
 public:
  explicit StereoModel(const ModelConfig& cfg);
  StereoModel(const StereoModel&) = delete;
  StereoModel& operator=(const StereoModel&) = delete;

  struct Output {
    DisparityMap d0;  // quarter resolution
    DisparityMap d1;  // full resolution
    CostVolume cost;
  };
  Output forward(const Tensor& left, const Tensor& right, NormMode mode);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }
  std::int64_t parameter_count() const { return reg_.parameter_count(); }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<CorrelationLift> lift_;
  std::unique_ptr<AttentionFeatureVolume> afv_;
  std::unique_ptr<CostAggregation> aggregation_;
  std::unique_ptr<SuperpixelUpsampler> upsampler_;
};

struct Batch {
  Tensor left;
  Tensor right;
  Tensor disparity;
  Tensor mask;
};

Batch make_batch(const std::vector<StereoSample>& samples, double max_disparity);

struct OptimState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
  double base_lr = 1e-3;
  std::vector<std::int64_t> decay_steps{300};
  double decay_factor = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Piecewise-constant schedule: base_lr times decay_factor per milestone passed.
  double lr_at(std::int64_t step_index) const;
};

/// One bias-corrected Adam update of `params` from their current grads (absent
/// grads count as zero). Increments state.step.
void adam_update(const std::vector<Tensor>& params, OptimState& state);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward in train mode, weighted two-scale loss, backward, Adam update.
/// A non-finite loss leaves parameters and optimizer untouched and throws.
double train_step(StereoModel& model, OptimState& optim, const Batch& batch);

struct TrainConfig {
  std::int64_t steps = 500;
  double lr = 1e-3;
  std::vector<std::int64_t> decay_steps{300};
  double decay_factor = 0.5;
  std::int64_t batch_size = 1;
  std::int64_t height = 64;
  std::int64_t width = 128;
  SynthSpec data_mode;
  std::uint64_t data_seed = 1000;
  std::uint64_t eval_seed = 900000;
  std::int64_t eval_samples = 8;
  std::int64_t log_every = 50;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat key=value text. Unknown keys are collected rather than ignored.
struct ConfigParseResult {
  RunConfig config;
  std::vector<std::string> unknown_keys;
};
ConfigParseResult parse_run_config(const std::string& text, const RunConfig& defaults = {});
/// Applies `key=value` overrides; returns unknown keys.
std::vector<std::string> apply_config_entries(RunConfig& cfg, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> config_entries(const RunConfig& cfg);
std::string format_run_config(const RunConfig& cfg);

/// Training sample `index` of the synthetic stream; depends only on the data seed.
StereoSample training_sample(const TrainConfig& cfg, std::int64_t max_disparity, std::int64_t index);
std::vector<StereoSample> evaluation_set(const TrainConfig& cfg, std::int64_t max_disparity);

struct TrainLogEntry {
  std::int64_t step;
  double loss;
  double lr;
};
std::vector<TrainLogEntry> train_model(StereoModel& model, const TrainConfig& cfg,
                                       const std::function<void(const TrainLogEntry&)>& on_step = {});

/// Full-resolution metrics over the valid masks of `samples` (eval-mode BatchNorm).
MetricsReport evaluate_model(StereoModel& model, const std::vector<StereoSample>& samples);

/// Named parameter arrays in registration order: magic, count, then per entry
/// name, kind, rank, extents and little-endian float64 values.
std::string serialize_checkpoint(const ParamRegistry& reg);
void load_checkpoint(ParamRegistry& reg, const std::string& bytes);
void save_checkpoint_file(const ParamRegistry& reg, const std::filesystem::path& path);
void load_checkpoint_file(ParamRegistry& reg, const std::filesystem::path& path);

enum class AblationAxis { afv, cgf_position, detach };
AblationAxis parse_axis(const std::string& text);
std::string axis_name(AblationAxis axis);

struct AblationConfigRow {
  std::string name;
  ModelConfig config;
};
/// Table rows for an axis, all derived from `base`.
std::vector<AblationConfigRow> ablation_configs(const ModelConfig& base, AblationAxis axis);

struct AblationRow {
  std::string name;
  std::string description;
  std::int64_t parameter_count = 0;
  double final_loss = 0.0;
  MetricsReport metrics;
  // Truncated rows: whether every CGF context-projection parameter received an
  // exactly-zero gradient on the first training step.
  std::optional<bool> context_grads_zero;
};

std::vector<AblationRow> run_ablation(const ModelConfig& base, AblationAxis axis, const TrainConfig& train,
                                      const std::function<void(const std::string&)>& progress = {});
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Names of parameters reached by the loss only through a CGF context branch.
std::vector<NamedTensor> context_branch_parameters(const ParamRegistry& reg);

}  // namespace cgistereo
