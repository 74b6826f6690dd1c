#include <iomanip>
#include <sstream>

#include "cgistereo/pipeline.hpp"

namespace cgistereo {

AblationAxis parse_axis(const std::string& text) {
  if (text == "afv") return AblationAxis::afv;
  if (text == "cgf_position") return AblationAxis::cgf_position;
  if (text == "detach") return AblationAxis::detach;
  throw ShapeError("ablate: unknown axis '" + text + "' (expected afv, cgf_position or detach)");
}

std::string axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::afv: return "afv";
    case AblationAxis::cgf_position: return "cgf_position";
    case AblationAxis::detach: return "detach";
  }
  return "";
}

std::vector<AblationConfigRow> ablation_configs(const ModelConfig& base, AblationAxis axis) {
  std::vector<AblationConfigRow> rows;
  auto with = [&](const std::string& name, bool afv, const std::string& positions, bool detach) {
    ModelConfig c = base;
    c.afv_enabled = afv;
    c.cgf.set_positions(positions);
    c.cgf.detach_context = detach;
    rows.push_back({name, c});
  };
  switch (axis) {
    case AblationAxis::afv:
      with("baseline", false, "none", false);
      with("AFV", true, "none", false);
      with("CGF", false, "decoder", false);
      with("AFV+CGF", true, "decoder", false);
      break;
    case AblationAxis::cgf_position:
      with("none", true, "none", false);
      with("encoder", true, "encoder", false);
      with("decoder", true, "decoder", false);
      with("encoder+decoder", true, "encoder,decoder", false);
      break;
    case AblationAxis::detach: {
      // Truncation needs a CGF somewhere; keep the base placement if it has one.
      const std::string pos = base.cgf.in_encoder || base.cgf.in_decoder ? base.cgf.positions_str() : "decoder";
      with("no truncation", base.afv_enabled, pos, false);
      with("truncating gradient", base.afv_enabled, pos, true);
      break;
    }
  }
  return rows;
}

std::vector<NamedTensor> context_branch_parameters(const ParamRegistry& reg) {
  std::vector<NamedTensor> out;
  for (const auto& e : reg.entries()) {
    if (e.kind == ParamKind::parameter && e.name.find(".context_proj.") != std::string::npos) out.push_back(e);
  }
  return out;
}

namespace {

std::string describe(const ModelConfig& c) {
  std::string s = "afv=" + std::string(c.afv_enabled ? "on" : "off") + " cgf=" + c.cgf.positions_str();
  if (c.cgf.detach_context) s += " detach";
  return s;
}

bool context_grads_vanish(StereoModel& model, const Batch& batch) {
  const auto params = model.registry().parameters();
  for (Tensor p : params) p.zero_grad();
  bool zero = true;
  {
    Tape tape;
    auto out = model.forward(batch.left, batch.right, NormMode::train);
    tape.backward(total_loss(out.d0.values, out.d1.values, batch.disparity, batch.mask, model.config().loss));
    for (const auto& e : context_branch_parameters(model.registry())) {
      for (double g : e.tensor.grad()) zero = zero && g == 0.0;
    }
  }
  for (Tensor p : params) p.zero_grad();
  return zero;
}

}  // namespace

std::vector<AblationRow> run_ablation(const ModelConfig& base, AblationAxis axis, const TrainConfig& train,
                                      const std::function<void(const std::string&)>& progress) {
  train.validate();
  std::vector<AblationRow> rows;
  for (const auto& cfg_row : ablation_configs(base, axis)) {
    if (progress) progress("ablate " + axis_name(axis) + ": " + cfg_row.name);
    StereoModel model(cfg_row.config);
    AblationRow row;
    row.name = cfg_row.name;
    row.description = describe(cfg_row.config);
    row.parameter_count = model.parameter_count();
    const auto maxd = cfg_row.config.matching.max_disparity;
    if (cfg_row.config.cgf.detach_context) {
      // The probe pass moves BatchNorm running stats; restore them before training.
      std::vector<std::vector<double>> saved;
      for (const auto& e : model.registry().entries()) saved.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
      row.context_grads_zero =
          context_grads_vanish(model, make_batch({training_sample(train, maxd, 0)}, static_cast<double>(maxd)));
      for (std::size_t i = 0; i < saved.size(); ++i) {
        Tensor t = model.registry().entries()[i].tensor;
        std::copy(saved[i].begin(), saved[i].end(), t.mutable_values().begin());
      }
    }
    const auto log = train_model(model, train);
    row.final_loss = log.empty() ? 0.0 : log.back().loss;
    row.metrics = evaluate_model(model, evaluation_set(train, maxd));
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "config" << std::setw(34) << "setting" << std::right << std::setw(10) << "params"
     << std::setw(12) << "final_loss" << std::setw(10) << "epe" << std::setw(10) << "d1%" << std::setw(10) << ">1px%"
     << std::setw(10) << ">3px%" << "  context_grad\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(22) << r.name << std::setw(34) << r.description << std::right << std::setw(10)
       << r.parameter_count << std::setprecision(4) << std::setw(12) << r.final_loss << std::setw(10) << r.metrics.epe_px
       << std::setprecision(2) << std::setw(10) << r.metrics.d1_percent << std::setw(10) << r.metrics.gt1_percent
       << std::setw(10) << r.metrics.gt3_percent << "  ";
    if (r.context_grads_zero) {
      os << (*r.context_grads_zero ? "zero" : "NONZERO");
    } else {
      os << "-";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cgistereo
