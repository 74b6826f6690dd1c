// Command-line front end: infer, train, eval, gradcheck, ablate, synth, replay.
//
// Exit codes: 0 success, 1 internal failure (including a failed gradient
// check), 2 user or configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cgistereo/diagnostics.hpp"
#include "cgistereo/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cgistereo;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything needed to re-run a command; this is what the manifest records.
struct Invocation {
  std::string command;
  std::vector<std::string> inputs;  // positional paths
  std::map<std::string, std::string> options;
  RunConfig config;
  std::uint64_t seed = 1;
  fs::path out = "out";
};

class Stopwatch {
 public:
  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    timings_[stage] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : timings_) j[k] = v;
    return j;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> timings_;
};

json metrics_json(const MetricsReport& r) {
  json j;
  if (r.defined()) {
    j["epe_px"] = r.epe_px;
    j["d1_percent"] = r.d1_percent;
    j["gt1_percent"] = r.gt1_percent;
    j["gt2_percent"] = r.gt2_percent;
    j["gt3_percent"] = r.gt3_percent;
  } else {
    j["epe_px"] = j["d1_percent"] = j["gt1_percent"] = j["gt2_percent"] = j["gt3_percent"] = nullptr;
  }
  j["valid_pixel_count"] = r.valid_pixel_count;
  return j;
}

std::string option(const Invocation& inv, const std::string& key, const std::string& fallback = "") {
  auto it = inv.options.find(key);
  return it == inv.options.end() ? fallback : it->second;
}

void load_weights(StereoModel& model, const Invocation& inv) {
  const auto ckpt = option(inv, "checkpoint");
  if (!ckpt.empty()) load_checkpoint_file(model.registry(), ckpt);
}

Tensor load_image(const std::string& path) { return image_to_tensor(read_pnm_file(path)); }

std::string report_lines(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string s;
  for (const auto& [name, r] : rows) s += name + " " + r.to_line() + "\n";
  return s;
}

// --- commands -------------------------------------------------------------

json cmd_infer(const Invocation& inv, Stopwatch& clock) {
  if (inv.inputs.size() != 2) throw UsageError("infer needs LEFT and RIGHT image paths");
  Tensor left = load_image(inv.inputs[0]);
  Tensor right = load_image(inv.inputs[1]);
  if (left.shape() != right.shape()) {
    throw UsageError("left image is " + std::to_string(left.dim(3)) + "x" + std::to_string(left.dim(2)) +
                     " but right image is " + std::to_string(right.dim(3)) + "x" + std::to_string(right.dim(2)));
  }
  if (left.dim(2) % 32 != 0 || left.dim(3) % 32 != 0) {
    throw UsageError("image size " + std::to_string(left.dim(3)) + "x" + std::to_string(left.dim(2)) +
                     " is not divisible by 32");
  }
  clock.lap("load");
  StereoModel model(inv.config.model);
  load_weights(model, inv);
  clock.lap("model");
  StereoModel::Output out;
  {
    NoGradGuard no_grad;
    out = model.forward(left, right, NormMode::eval);
  }
  clock.lap("forward");
  fs::create_directories(inv.out);
  write_pfm_file(inv.out / "disp.pfm", tensor_to_field(out.d1.values));
  if (option(inv, "d0") == "true") write_pfm_file(inv.out / "d0.pfm", tensor_to_field(out.d0.values));
  json result;
  result["disparity"] = (inv.out / "disp.pfm").string();
  const auto gt_path = option(inv, "gt");
  if (!gt_path.empty()) {
    Tensor gt = field_to_tensor(read_pfm_file(gt_path).field);
    if (gt.shape() != out.d1.values.shape()) throw UsageError("ground truth size does not match the images");
    const auto r = evaluate(out.d1.values, gt,
                            valid_mask(gt, static_cast<double>(inv.config.model.matching.max_disparity)));
    result["metrics"] = metrics_json(r);
    std::cout << r.to_line() << "\n";
  }
  clock.lap("write");
  return result;
}

json cmd_train(const Invocation& inv, Stopwatch& clock) {
  StereoModel model(inv.config.model);
  load_weights(model, inv);
  const auto maxd = inv.config.model.matching.max_disparity;
  const auto eval_set = evaluation_set(inv.config.train, maxd);
  clock.lap("setup");
  const MetricsReport before = evaluate_model(model, eval_set);
  clock.lap("eval_initial");
  std::string loss_log = "step loss lr\n";
  const auto log_every = std::max<std::int64_t>(1, inv.config.train.log_every);
  const auto log = train_model(model, inv.config.train, [&](const TrainLogEntry& e) {
    char line[96];
    std::snprintf(line, sizeof line, "%lld %.17g %.17g\n", static_cast<long long>(e.step), e.loss, e.lr);
    loss_log += line;
    if ((e.step + 1) % log_every == 0) std::cerr << "step " << e.step + 1 << " loss " << e.loss << "\n";
  });
  clock.lap("train");
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    rows.emplace_back("eval" + std::to_string(i), evaluate_model(model, {eval_set[i]}));
  }
  const MetricsReport after = evaluate_model(model, eval_set);
  rows.emplace_back("aggregate", after);
  clock.lap("eval_final");
  fs::create_directories(inv.out);
  save_checkpoint_file(model.registry(), inv.out / "checkpoint.bin");
  write_file_atomic(inv.out / "loss.log", loss_log);
  write_file_atomic(inv.out / "metrics.txt", "initial " + before.to_line() + "\n" + report_lines(rows));
  write_file_atomic(inv.out / "config.txt", format_run_config(inv.config));
  clock.lap("write");
  std::cout << "initial " << before.to_line() << "\nfinal   " << after.to_line() << "\n";
  json result;
  result["checkpoint"] = (inv.out / "checkpoint.bin").string();
  result["final_loss"] = log.empty() ? 0.0 : log.back().loss;
  result["initial_metrics"] = metrics_json(before);
  result["final_metrics"] = metrics_json(after);
  return result;
}

std::vector<fs::path> bundle_dirs(const fs::path& root) {
  if (fs::exists(root / "left.ppm")) return {root};
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "left.ppm")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw UsageError("no sample bundles (left.ppm, right.ppm, disp.pfm, mask.pgm) under " + root.string());
  return dirs;
}

json cmd_eval(const Invocation& inv, Stopwatch& clock) {
  if (inv.inputs.size() != 1) throw UsageError("eval needs a DATASET directory");
  const auto dirs = bundle_dirs(inv.inputs[0]);
  const auto pred_name = option(inv, "pred");
  std::unique_ptr<StereoModel> model;
  if (pred_name.empty()) {
    model = std::make_unique<StereoModel>(inv.config.model);
    load_weights(*model, inv);
  }
  clock.lap("setup");
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::vector<MetricsReport> reports;
  json per_sample = json::array();
  for (const auto& dir : dirs) {
    const StereoSample s = read_sample_bundle(dir);
    Tensor pred;
    if (model) {
      NoGradGuard no_grad;
      pred = model->forward(s.left, s.right, NormMode::eval).d1.values;
    } else {
      pred = field_to_tensor(read_pfm_file(dir / pred_name).field);
      if (pred.shape() != s.disparity.shape()) throw UsageError(dir.string() + ": prediction size mismatch");
    }
    const auto r = evaluate(pred, s.disparity, s.valid);
    rows.emplace_back(dir.filename().string(), r);
    reports.push_back(r);
    json j = metrics_json(r);
    j["sample"] = dir.filename().string();
    per_sample.push_back(j);
  }
  const auto total = aggregate(reports);
  rows.emplace_back("aggregate", total);
  clock.lap("evaluate");
  fs::create_directories(inv.out);
  const std::string text = report_lines(rows);
  write_file_atomic(inv.out / "metrics.txt", text);
  json record;
  record["samples"] = per_sample;
  record["aggregate"] = metrics_json(total);
  write_file_atomic(inv.out / "metrics.json", record.dump(2) + "\n");
  clock.lap("write");
  std::cout << text;
  return record;
}

json cmd_gradcheck(const Invocation& inv, Stopwatch& clock, bool& failed) {
  std::string text;
  double worst = 0.0;
  const auto checks = run_gradcheck_suite(inv.seed, 1e-3, [&](const BlockCheck& c) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s max_rel_err=%.3e checked=%lld skipped=%lld %s\n", c.name.c_str(),
                  c.result.max_rel_error, static_cast<long long>(c.result.checked),
                  static_cast<long long>(c.result.skipped), c.passed() ? "ok" : "FAIL");
    std::cout << line << std::flush;
    text += line;
  });
  clock.lap("gradcheck");
  json blocks = json::array();
  for (const auto& c : checks) {
    failed = failed || !c.passed();
    worst = std::max(worst, c.result.max_rel_error);
    blocks.push_back({{"block", c.name},
                      {"max_rel_error", c.result.max_rel_error},
                      {"checked", c.result.checked},
                      {"skipped", c.result.skipped},
                      {"passed", c.passed()}});
  }
  fs::create_directories(inv.out);
  write_file_atomic(inv.out / "gradcheck.txt", text);
  std::cout << (failed ? "FAILED" : "PASSED") << ": max relative error " << worst << " (tolerance "
            << kGradCheckTolerance << ")\n";
  return {{"blocks", blocks}, {"max_rel_error", worst}, {"passed", !failed}};
}

json cmd_ablate(const Invocation& inv, Stopwatch& clock) {
  const auto axis = parse_axis(option(inv, "axis", "afv"));
  const auto rows = run_ablation(inv.config.model, axis, inv.config.train,
                                 [](const std::string& msg) { std::cerr << msg << "\n"; });
  clock.lap("ablate");
  const std::string table = format_ablation_table(rows);
  fs::create_directories(inv.out);
  write_file_atomic(inv.out / "ablation.txt", table);
  clock.lap("write");
  std::cout << table;
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"name", r.name}, {"setting", r.description}, {"parameters", r.parameter_count},
           {"final_loss", r.final_loss}, {"metrics", metrics_json(r.metrics)}};
    if (r.context_grads_zero) j["context_grads_zero"] = *r.context_grads_zero;
    out.push_back(j);
  }
  return {{"axis", axis_name(axis)}, {"rows", out}};
}

json cmd_synth(const Invocation& inv, Stopwatch& clock) {
  const auto count = std::stoll(option(inv, "count", "1"));
  if (count < 1) throw UsageError("--count must be >= 1");
  const auto& t = inv.config.train;
  json written = json::array();
  for (std::int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03lld", static_cast<long long>(i));
    const auto s = synth_stereo(mix_seed(inv.seed, "sample" + std::to_string(i)), t.height, t.width,
                                inv.config.model.matching.max_disparity, t.data_mode);
    write_sample_bundle(inv.out / name, s);
    written.push_back(name);
  }
  clock.lap("synth");
  return {{"bundles", written}};
}

// --- plumbing -------------------------------------------------------------

int execute(const Invocation& inv) {
  Stopwatch clock;
  bool failed = false;
  json result;
  if (inv.command == "infer") {
    result = cmd_infer(inv, clock);
  } else if (inv.command == "train") {
    result = cmd_train(inv, clock);
  } else if (inv.command == "eval") {
    result = cmd_eval(inv, clock);
  } else if (inv.command == "gradcheck") {
    result = cmd_gradcheck(inv, clock, failed);
  } else if (inv.command == "ablate") {
    result = cmd_ablate(inv, clock);
  } else if (inv.command == "synth") {
    result = cmd_synth(inv, clock);
  } else {
    throw UsageError("unknown command '" + inv.command + "'");
  }
  json manifest;
  manifest["command"] = inv.command;
  manifest["inputs"] = inv.inputs;
  manifest["options"] = inv.options;
  manifest["seed"] = inv.seed;
  manifest["out"] = inv.out.string();
  manifest["config"] = config_entries(inv.config);
  manifest["timings_s"] = clock.to_json();
  manifest["result"] = result;
  manifest["exit_code"] = failed ? 1 : 0;
  fs::create_directories(inv.out);
  write_file_atomic(inv.out / "manifest.json", manifest.dump(2) + "\n");
  return failed ? 1 : 0;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& sets,
                         const std::optional<std::uint64_t>& seed) {
  RunConfig cfg;
  std::vector<std::string> unknown;
  if (!config_path.empty()) {
    auto parsed = parse_run_config(read_file(config_path));
    cfg = parsed.config;
    unknown = parsed.unknown_keys;
  }
  std::map<std::string, std::string> overrides;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& k : apply_config_entries(cfg, overrides)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw UsageError("unknown config keys: " + list);
  }
  if (seed) {
    cfg.model.seed = *seed;
    cfg.model.backbone.seed = *seed;
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

Invocation from_manifest(const fs::path& path, const std::string& out_override) {
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("manifest " + path.string() + ": " + e.what());
  }
  Invocation inv;
  try {
    inv.command = m.at("command").get<std::string>();
    inv.inputs = m.at("inputs").get<std::vector<std::string>>();
    inv.options = m.at("options").get<std::map<std::string, std::string>>();
    inv.seed = m.at("seed").get<std::uint64_t>();
    inv.out = out_override.empty() ? fs::path(m.at("out").get<std::string>()) : fs::path(out_override);
    const auto entries = m.at("config").get<std::map<std::string, std::string>>();
    const auto unknown = apply_config_entries(inv.config, entries);
    if (!unknown.empty()) throw UsageError("manifest has unknown config key " + unknown.front());
  } catch (const json::exception& e) {
    throw UsageError("manifest " + path.string() + ": " + e.what());
  }
  inv.config.model.validate();
  inv.config.train.validate();
  return inv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo disparity estimation: inference, training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", checkpoint, axis = "afv", gt, pred, manifest_path;
  std::vector<std::string> sets, inputs;
  std::optional<std::uint64_t> seed;
  std::int64_t count = 1;
  bool want_d0 = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run-config file (key = value lines)");
    sub->add_option("--seed", seed, "Run seed (model initialization; synth sample stream)");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--set", sets, "Config override key=value (repeatable)");
  };
  auto* infer = app.add_subcommand("infer", "Predict a disparity map for one rectified pair");
  common(infer);
  infer->add_option("left", inputs, "LEFT RIGHT images (PPM/PGM)")->expected(2)->required();
  infer->add_option("--checkpoint", checkpoint, "Model weights");
  infer->add_option("--gt", gt, "Ground-truth PFM; metrics go to stdout and the manifest");
  infer->add_flag("--d0", want_d0, "Also write the quarter-resolution map as d0.pfm");

  auto* train = app.add_subcommand("train", "Train on the synthetic stream; writes checkpoint and loss log");
  common(train);
  train->add_option("--checkpoint", checkpoint, "Initial weights");

  auto* eval = app.add_subcommand("eval", "Evaluate on a directory of sample bundles");
  common(eval);
  eval->add_option("dataset", inputs, "Bundle directory, or a directory of bundles")->expected(1)->required();
  eval->add_option("--checkpoint", checkpoint, "Model weights");
  eval->add_option("--pred", pred, "Score this PFM file inside each bundle instead of running the model");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every block");
  common(gradcheck);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every row of an ablation axis");
  common(ablate);
  ablate->add_option("--axis", axis, "afv | cgf_position | detach")
      ->check(CLI::IsMember({"afv", "cgf_position", "detach"}));

  auto* synth = app.add_subcommand("synth", "Write synthetic sample bundles");
  common(synth);
  synth->add_option("--count", count, "Number of bundles");

  auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest.json");
  replay->add_option("manifest", manifest_path, "Manifest file")->required();
  replay->add_option("--out", out_dir, "Output directory (defaults to the manifest's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Invocation inv;
    if (replay->parsed()) {
      inv = from_manifest(manifest_path, replay->count("--out") ? out_dir : "");
    } else {
      CLI::App* sub = app.get_subcommands().front();
      inv.command = sub->get_name();
      inv.config = resolve_config(config_path, sets, seed);
      inv.seed = seed ? *seed : inv.config.model.seed;
      inv.out = out_dir;
      inv.inputs = inputs;
      for (auto& p : inv.inputs) p = fs::absolute(p).lexically_normal().string();
      if (!checkpoint.empty()) inv.options["checkpoint"] = fs::absolute(checkpoint).lexically_normal().string();
      if (!gt.empty()) inv.options["gt"] = fs::absolute(gt).lexically_normal().string();
      if (!pred.empty()) inv.options["pred"] = pred;
      if (want_d0) inv.options["d0"] = "true";
      if (inv.command == "ablate") inv.options["axis"] = axis;
      if (inv.command == "synth") inv.options["count"] = std::to_string(count);
    }
    return execute(inv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
