#include "qcdq/artifacts.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qcdq/error.hpp"

namespace qcdq {

ArtifactWriter::ArtifactWriter(std::filesystem::path dir, Json resolved_config)
    : dir_(std::move(dir)), config_(std::move(resolved_config)), hash_(config_hash(config_)) {
  if (config_.contains("seed") && !config_["seed"].is_null()) seed_ = get_u64(config_, "seed");
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir_.string() + "': " + ec.message());
}

std::filesystem::path ArtifactWriter::write_json(const std::string& name, Json body) const {
  body["config_hash"] = hash_;
  body["seed"] = seed_;
  body["config"] = config_;
  const auto path = dir_ / name;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << body.dump(2) << "\n";
  return path;
}

std::filesystem::path ArtifactWriter::write_csv(const std::string& name, const std::vector<std::string>& columns,
                                                const std::vector<std::vector<double>>& rows) const {
  const auto path = dir_ / name;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << "# config_hash: " << hash_ << "\n";
  out << "# seed: " << seed_ << "\n";
  out << "# config: " << config_.dump() << "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
  return path;
}

std::string format_double(double x) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError("'" + what + "' must be a list of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = as_double(j[i], what);
  return v;
}

Json to_json(const RbfBasis& basis) {
  Json centers = Json::array();
  for (Eigen::Index i = 0; i < basis.centers.rows(); ++i) centers.push_back(vector_to_json(basis.centers.row(i).transpose()));
  return {{"K", basis.size()},
          {"b", basis.b},
          {"centers", centers},
          {"widths", vector_to_json(basis.widths)},
          {"width_convention", basis.convention == WidthConvention::kPrecision ? "precision" : "scale"}};
}

RbfBasis basis_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("centers") || !j.contains("widths") || !j.contains("b"))
    throw ValidationError("basis JSON needs centers, widths and b");
  const Json& c = j["centers"];
  if (!c.is_array() || c.empty()) throw ValidationError("basis centers must be a nonempty list");
  const auto k = static_cast<Eigen::Index>(c.size());
  const Eigen::Index dim = static_cast<Eigen::Index>(c[0].size());
  RbfBasis basis;
  basis.centers.resize(k, dim);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::VectorXd row = vector_from_json(c[static_cast<std::size_t>(i)], "basis.centers");
    if (row.size() != dim) throw ValidationError("basis centers have inconsistent dimension");
    basis.centers.row(i) = row.transpose();
  }
  basis.widths = vector_from_json(j["widths"], "basis.widths");
  basis.b = as_double(j["b"], "basis.b");
  const std::string conv = j.value("width_convention", std::string("precision"));
  if (conv == "precision") basis.convention = WidthConvention::kPrecision;
  else if (conv == "scale") basis.convention = WidthConvention::kScale;
  else throw ValidationError("basis.width_convention must be 'precision' or 'scale'");
  if (j.contains("K") && as_int(j["K"], "basis.K") != k) throw ValidationError("basis K does not match the centers");
  validate(basis);
  return basis;
}

Json to_json(const TrainResult& r) {
  Json j{{"theta_final", vector_to_json(r.theta_final)},
         {"theta_pr", r.theta_pr ? vector_to_json(*r.theta_pr) : Json(nullptr)},
         {"S", r.sample_count},
         {"regen_count", r.regen_count},
         {"reset_count", r.reset_count},
         {"locality_violations", r.locality_violations},
         {"log_stride", r.log_stride}};
  return j;
}

Json to_json(const EvalReport& r) {
  return {{"mdd", r.mdd},         {"mde", r.mde},         {"J", r.cost},         {"p_fa", r.p_fa},
          {"se_mdd", r.se_mdd},   {"se_mde", r.se_mde},   {"se_J", r.se_cost},   {"se_p_fa", r.se_p_fa},
          {"kappa", r.kappa},     {"n_paths", r.n_paths}, {"capped_paths", r.capped_paths}};
}

Json to_json(const AsymptoticSummary& s) {
  return {{"m0", s.m0},          {"m1", s.m1},         {"v0", s.v0},       {"v_plus", s.v_plus},
          {"gamma2", s.gamma2},  {"rstar", s.rstar},   {"m0_se", s.m0_se}, {"m1_se", s.m1_se},
          {"root_tolerance", s.root_tolerance}};
}

Json to_json(const ThresholdResult& t) {
  return {{"is_threshold", t.is_threshold},
          {"h", t.stop_set_empty ? Json(nullptr) : Json(t.h)},
          {"stop_set_empty", t.stop_set_empty},
          {"violation_count", t.violations.size()},
          {"violations_first", t.violations.empty() ? Json(nullptr) : Json(t.violations.front())},
          {"violations_last", t.violations.empty() ? Json(nullptr) : Json(t.violations.back())}};
}

Json to_json(const BatchMeansReport& r) {
  Json runs = Json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"ok", run.ok},
                    {"error", run.error},
                    {"S", run.sample_count},
                    {"theta", run.ok ? vector_to_json(run.theta) : Json(nullptr)},
                    {"threshold", run.threshold ? Json(*run.threshold) : Json(nullptr)}});
  }
  Json sigma = Json::array();
  for (Eigen::Index i = 0; i < r.sigma.rows(); ++i) sigma.push_back(vector_to_json(r.sigma.row(i).transpose()));
  return {{"M", r.m},
          {"runs", runs},
          {"theta_bar", vector_to_json(r.theta_bar)},
          {"sigma", sigma},
          {"sigma_valid", r.sigma_valid},
          {"thresholds", r.thresholds}};
}

Json to_json(const ContractionReport& r) {
  return {{"rho_hat", r.rho_hat}, {"rank_R", r.rank_r}, {"rank_sigma_plus_m", r.rank_sigma_m}, {"d", r.d}};
}

std::vector<std::vector<double>> table_rows(const ThresholdTable& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < t.grid.size(); ++i) rows.push_back({t.grid[i], t.mde[i], t.mdd[i], t.se_mde[i], t.se_mdd[i]});
  return rows;
}

std::vector<std::vector<double>> iterate_log_rows(const TrainResult& r) {
  std::vector<std::vector<double>> rows;
  for (const auto& [k, theta] : r.iterate_log) {
    std::vector<double> row{static_cast<double>(k)};
    for (Eigen::Index i = 0; i < theta.size(); ++i) row.push_back(theta(i));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace qcdq
