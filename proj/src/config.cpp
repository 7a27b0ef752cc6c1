#include "qcdq/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "qcdq/error.hpp"

namespace qcdq {

namespace {

Json law(const std::string& kind, Json params) { return Json{{"kind", kind}, {"params", std::move(params)}}; }

std::vector<std::string> split_dotted(const std::string& dotted) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string item;
  while (std::getline(ss, item, '.')) {
    if (item.empty()) throw ValidationError("malformed config path '" + dotted + "'");
    parts.push_back(item);
  }
  if (parts.empty()) throw ValidationError("empty config path");
  return parts;
}

Json yaml_node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      Json arr = Json::array();
      for (const auto& item : node) arr.push_back(yaml_node_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      Json obj = Json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_node_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const std::string text = node.Scalar();
      if (node.Tag() == "!") return text;  // quoted
      return parse_scalar(text);
    }
  }
  return nullptr;
}

void merge_into(Json& base, const Json& user, const std::string& prefix, std::vector<std::string>& unknown) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      unknown.push_back(path);
      continue;
    }
    Json& slot = base[it.key()];
    if (slot.is_object() && !opaque_paths().count(path)) {
      if (!it.value().is_object()) throw ValidationError("config field '" + path + "' must be a mapping");
      merge_into(slot, it.value(), path, unknown);
    } else {
      slot = it.value();
    }
  }
}

}  // namespace

Json default_config() {
  const Json gauss0 = law("gaussian", {{"mu", 0.0}, {"sigma", 1.0}});
  const Json gauss1 = law("gaussian", {{"mu", 0.5}, {"sigma", 1.0}});
  Json sis = Json::array();
  sis.push_back({{"kind", "cusum"},
                 {"drift", {{"kind", "iid_llr"}, {"params", {{"breve0", gauss0}, {"breve1", gauss1}}}}},
                 {"shift", "rstar"}});
  return Json{
      {"seed", nullptr},
      {"output_dir", ""},
      {"threads", 1},
      {"model", {{"pre", gauss0}, {"post", gauss1}, {"change", law("geometric", {{"p", 0.02}})}, {"kappa", 27.0}}},
      {"sis", sis},
      {"asymptotics",
       {{"rho_a", "nominal"},
        {"mc_samples", 10'000'000},
        {"mc_seed", 1},
        {"kappas", {2, 5, 10, 20, 27, 50, 100}},
        {"anchor", {{"kappa", 100.0}, {"h", nullptr}, {"J", nullptr}}}}},
      {"basis",
       {{"K", 20}, {"b", 0.4}, {"n_paths", 20'000}, {"width_convention", "scale"}, {"file", ""}}},
      {"train",
       {{"n_regens", 200'000},
        {"alpha0", 1.0},
        {"rho", 1.0},
        {"gamma", 1.0},
        {"eta", 30.0},
        {"explore_p", 0.5},
        {"regen_on_stop", false},
        {"reset_bound", 5e3},
        {"theta0_scale", 50.0},
        {"averaging", true},
        {"episode_cap", 1'000'000},
        {"log_capacity", 10'000},
        {"zap", {{"enabled", true}, {"beta0", 1.0}, {"beta_rho", 0.85}, {"ridge", 1e-6}, {"refresh_every", 1000}}}}},
      {"eval",
       {{"n_paths", 100'000},
        {"step_cap", 1'000'000},
        {"grid", {{"lo", 0.0}, {"hi", 20.0}, {"n", 1000}}},
        {"shiryaev_grid", {{"n", 1000}}},
        {"shiryaev_rho", nullptr},
        {"kappas", {2, 5, 10, 20, 27, 50, 100}},
        {"scan_points", 30'001},
        {"policy", "final"},
        {"threshold", nullptr},
        {"theta_file", ""}}},
      {"meanflow",
       {{"mode", "counterexample"},
        {"xi", 100.0},
        {"n_samples", 1'000'000},
        {"n_batches", 32},
        {"dt", 0.1},
        {"t_end", 1000.0},
        {"n_directions", 10},
        {"explore_p", 0.5},
        {"gamma", 1.0},
        {"burn_in_regens", 1000},
        {"instance", nullptr}}},
      {"batchmeans", {{"M", 40}, {"same_seed", false}}},
      {"region",
       {{"lo1", 0.0}, {"hi1", 30.0}, {"n1", 121}, {"lo2", 0.0}, {"hi2", 30.0}, {"n2", 121}, {"h1", nullptr}, {"h2", nullptr}}},
  };
}

const std::set<std::string>& opaque_paths() {
  static const std::set<std::string> paths{"model.pre",       "model.post", "model.change", "sis",
                                           "meanflow.instance", "asymptotics.kappas", "eval.kappas"};
  return paths;
}

Json parse_scalar(const std::string& text) {
  if (text.empty()) return "";
  if (text == "null" || text == "~") return nullptr;
  if (text == "true" || text == "True") return true;
  if (text == "false" || text == "False") return false;
  if (text.front() == '[' || text.front() == '{') {
    try {
      return Json::parse(text);
    } catch (const std::exception&) {
      return yaml_to_json(text);
    }
  }
  {
    std::size_t pos = 0;
    try {
      const long long v = std::stoll(text, &pos);
      if (pos == text.size()) return v;
    } catch (const std::exception&) {
    }
  }
  {
    std::size_t pos = 0;
    try {
      const double v = std::stod(text, &pos);
      if (pos == text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
  }
  return text;
}

Json yaml_to_json(const std::string& text) {
  try {
    return yaml_node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
}

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  // CSV artifact: the resolved config sits in a header comment.
  const std::string marker = "# config: ";
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind(marker, 0) == 0) return Json::parse(line.substr(marker.size()));
    if (line.empty() || line[0] != '#') break;
  }
  Json j;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ValidationError(std::string("config parse error: ") + e.what());
    }
  } else {
    j = yaml_to_json(text);
  }
  if (j.is_null()) j = Json::object();
  if (!j.is_object()) throw ValidationError("config root must be a mapping");
  if (j.contains("config") && j.contains("config_hash") && j["config"].is_object()) return j["config"];
  return j;
}

void apply_override(Json& cfg, const std::string& dotted, const std::string& value) {
  const auto parts = split_dotted(dotted);
  Json* node = &cfg;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ValidationError("override path '" + dotted + "' crosses a non-mapping value");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object()) throw ValidationError("override path '" + dotted + "' crosses a non-mapping value");
  (*node)[parts.back()] = parse_scalar(value);
}

Json merge_with_defaults(const Json& user) {
  Json out = default_config();
  if (user.is_null()) return out;
  if (!user.is_object()) throw ValidationError("config root must be a mapping");
  std::vector<std::string> unknown;
  merge_into(out, user, "", unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
  }
  return out;
}

std::string config_hash(const Json& cfg) {
  const std::string text = cfg.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

const Json& at_path(const Json& cfg, const std::string& dotted) {
  const Json* node = &cfg;
  for (const auto& part : split_dotted(dotted)) {
    if (!node->is_object() || !node->contains(part))
      throw ValidationError("missing required field: " + dotted);
    node = &(*node)[part];
  }
  return *node;
}

double as_double(const Json& j, const std::string& what) {
  if (!j.is_number()) throw ValidationError("field '" + what + "' must be a number");
  return j.get<double>();
}

std::int64_t as_int(const Json& j, const std::string& what) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::floor(v) == v && std::abs(v) < 9.0e18) return static_cast<std::int64_t>(v);
  }
  throw ValidationError("field '" + what + "' must be an integer");
}

double get_double(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (j.is_null()) throw ValidationError("missing required field: " + dotted);
  return as_double(j, dotted);
}

std::int64_t get_int(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (j.is_null()) throw ValidationError("missing required field: " + dotted);
  return as_int(j, dotted);
}

std::uint64_t get_u64(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (j.is_null()) throw ValidationError("missing required field: " + dotted);
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  const std::int64_t v = as_int(j, dotted);
  if (v < 0) throw ValidationError("field '" + dotted + "' must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

bool get_bool(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (!j.is_boolean()) throw ValidationError("field '" + dotted + "' must be true or false");
  return j.get<bool>();
}

std::string get_string(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (!j.is_string()) throw ValidationError("field '" + dotted + "' must be a string");
  return j.get<std::string>();
}

std::vector<double> get_double_list(const Json& cfg, const std::string& dotted) {
  const Json& j = at_path(cfg, dotted);
  if (!j.is_array()) throw ValidationError("field '" + dotted + "' must be a list");
  std::vector<double> out;
  for (const auto& x : j) out.push_back(as_double(x, dotted));
  return out;
}

void require_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError("'" + where + "' must be a mapping");
  std::string bad;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      bad += " " + where + "." + it.key();
  if (!bad.empty()) throw ValidationError("unknown config keys:" + bad);
}

}  // namespace qcdq
