#include <charconv>
#include <functional>
#include <iomanip>
#include <sstream>

#include "cgistereo/pipeline.hpp"

namespace cgistereo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ShapeError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ShapeError("config: " + key + " expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ShapeError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ShapeError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_ints(const std::vector<std::int64_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

#define CGI_INT_FIELD(member)                                                                              \
  Field {                                                                                                  \
    [](const RunConfig& c) { return std::to_string(c.member); },                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); }          \
  }
#define CGI_UINT_FIELD(member)                                                                             \
  Field {                                                                                                  \
    [](const RunConfig& c) { return std::to_string(c.member); },                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_uint(k, v); }         \
  }
#define CGI_REAL_FIELD(member)                                                                             \
  Field {                                                                                                  \
    [](const RunConfig& c) { return fmt_double(c.member); },                                               \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }       \
  }
#define CGI_BOOL_FIELD(member)                                                                             \
  Field {                                                                                                  \
    [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }         \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["backbone.stem_channels"] = CGI_INT_FIELD(model.backbone.stem_channels);
    t["backbone.channels"] = Field{
        [](const RunConfig& c) {
          const auto& ch = c.model.backbone.channels;
          return join_ints({ch.begin(), ch.end()});
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          const auto parts = split_list(v);
          if (parts.size() != 4) throw ShapeError("config: " + k + " expects four comma-separated integers");
          for (std::size_t i = 0; i < 4; ++i) c.model.backbone.channels[i] = to_int(k, parts[i]);
        }};
    t["backbone.blocks_per_stage"] = CGI_INT_FIELD(model.backbone.blocks_per_stage);
    t["backbone.leaky_slope"] = CGI_REAL_FIELD(model.backbone.leaky_slope);
    t["backbone.seed"] = CGI_UINT_FIELD(model.backbone.seed);
    t["matching.max_disparity"] = CGI_INT_FIELD(model.matching.max_disparity);
    t["matching.corr_channels"] = CGI_INT_FIELD(model.matching.corr_channels);
    t["matching.epsilon"] = CGI_REAL_FIELD(model.matching.epsilon);
    t["cgf.positions"] = Field{[](const RunConfig& c) { return c.model.cgf.positions_str(); },
                               [](RunConfig& c, const std::string&, const std::string& v) {
                                 c.model.cgf.set_positions(v);
                               }};
    t["cgf.detach_context"] = CGI_BOOL_FIELD(model.cgf.detach_context);
    t["cgf.kernel"] = CGI_INT_FIELD(model.cgf.fusion_kernel);
    t["afv.enabled"] = CGI_BOOL_FIELD(model.afv_enabled);
    t["loss.lambda0"] = CGI_REAL_FIELD(model.loss.lambda0);
    t["loss.lambda1"] = CGI_REAL_FIELD(model.loss.lambda1);
    t["loss.smooth_l1_beta"] = CGI_REAL_FIELD(model.loss.smooth_l1_beta);
    t["model.upsample_hidden"] = CGI_INT_FIELD(model.upsample_hidden);
    t["seed"] = CGI_UINT_FIELD(model.seed);
    t["train.steps"] = CGI_INT_FIELD(train.steps);
    t["train.lr"] = CGI_REAL_FIELD(train.lr);
    t["train.decay_steps"] = Field{[](const RunConfig& c) { return join_ints(c.train.decay_steps); },
                                   [](RunConfig& c, const std::string& k, const std::string& v) {
                                     c.train.decay_steps.clear();
                                     for (const auto& p : split_list(v)) c.train.decay_steps.push_back(to_int(k, p));
                                   }};
    t["train.decay_factor"] = CGI_REAL_FIELD(train.decay_factor);
    t["train.batch_size"] = CGI_INT_FIELD(train.batch_size);
    t["train.log_every"] = CGI_INT_FIELD(train.log_every);
    t["data.height"] = CGI_INT_FIELD(train.height);
    t["data.width"] = CGI_INT_FIELD(train.width);
    t["data.mode"] = Field{[](const RunConfig& c) { return c.train.data_mode.str(); },
                           [](RunConfig& c, const std::string&, const std::string& v) {
                             c.train.data_mode = SynthSpec::parse(v);
                           }};
    t["data.seed"] = CGI_UINT_FIELD(train.data_seed);
    t["eval.seed"] = CGI_UINT_FIELD(train.eval_seed);
    t["eval.samples"] = CGI_INT_FIELD(train.eval_samples);
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> apply_config_entries(RunConfig& cfg, const std::map<std::string, std::string>& entries) {
  std::vector<std::string> unknown;
  const auto& table = fields();
  for (const auto& [key, value] : entries) {
    auto it = table.find(key);
    if (it == table.end()) {
      unknown.push_back(key);
      continue;
    }
    it->second.set(cfg, key, value);
  }
  return unknown;
}

ConfigParseResult parse_run_config(const std::string& text, const RunConfig& defaults) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ShapeError("config line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    }
    entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ConfigParseResult result{defaults, {}};
  result.unknown_keys = apply_config_entries(result.config, entries);
  return result;
}

std::map<std::string, std::string> config_entries(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(cfg);
  return out;
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : config_entries(cfg)) out += key + " = " + value + "\n";
  return out;
}

}  // namespace cgistereo
