#pragma once

// Experiment configuration trees: YAML or JSON input, dotted overrides,
// defaults with unknown-key rejection, and a stable content hash.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace qcdq {

using Json = nlohmann::json;

/// Full default tree. Blocks listed by opaque_paths() are replaced wholesale
/// by user input and validated by their own parsers.
Json default_config();
const std::set<std::string>& opaque_paths();

/// Reads a YAML or JSON file. A JSON artifact carrying an embedded "config"
/// object, or a CSV artifact with a "# config: " header line, yields that config.
Json load_config_file(const std::string& path);

/// YAML text to JSON (typed scalars: null, bool, integer, float, string).
Json yaml_to_json(const std::string& text);

/// Typed scalar from override text ("2e4" -> 20000.0, "true" -> true, "[1,2]" -> array).
Json parse_scalar(const std::string& text);

/// Sets cfg at a dotted path ("train.zap.beta0"), creating objects as needed.
void apply_override(Json& cfg, const std::string& dotted, const std::string& value);

/// Defaults overlaid with user values. Throws ValidationError listing every
/// unknown key.
Json merge_with_defaults(const Json& user);

/// FNV-1a 64 of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const Json& cfg);

// Typed access at a dotted path; errors name the path.
const Json& at_path(const Json& cfg, const std::string& dotted);
double get_double(const Json& cfg, const std::string& dotted);
std::int64_t get_int(const Json& cfg, const std::string& dotted);
std::uint64_t get_u64(const Json& cfg, const std::string& dotted);
bool get_bool(const Json& cfg, const std::string& dotted);
std::string get_string(const Json& cfg, const std::string& dotted);
std::vector<double> get_double_list(const Json& cfg, const std::string& dotted);

/// Value of a JSON node as the given type; `what` names it in errors.
double as_double(const Json& j, const std::string& what);
std::int64_t as_int(const Json& j, const std::string& what);

/// Throws ValidationError unless every key of obj is in allowed.
void require_keys(const Json& obj, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace qcdq
