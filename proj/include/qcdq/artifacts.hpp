#pragma once

// Artifact files. Every artifact carries the config hash, the master seed and
// the full resolved config (JSON fields, or "# key: value" CSV header lines).

#include <filesystem>
#include <string>
#include <vector>

#include "qcdq/asymptotics.hpp"
#include "qcdq/basis.hpp"
#include "qcdq/config.hpp"
#include "qcdq/eval.hpp"
#include "qcdq/meanflow.hpp"
#include "qcdq/qlearn.hpp"

namespace qcdq {

class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, Json resolved_config);

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }
  std::uint64_t seed() const { return seed_; }
  const Json& config() const { return config_; }

  /// Writes body plus {config_hash, seed, config}; returns the path.
  std::filesystem::path write_json(const std::string& name, Json body) const;

  std::filesystem::path write_csv(const std::string& name, const std::vector<std::string>& columns,
                                  const std::vector<std::vector<double>>& rows) const;

 private:
  std::filesystem::path dir_;
  Json config_;
  std::string hash_;
  std::uint64_t seed_ = 0;
};

/// Shortest round-trip decimal text of a double.
std::string format_double(double x);

Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j, const std::string& what);

Json to_json(const RbfBasis& basis);
RbfBasis basis_from_json(const Json& j);

Json to_json(const TrainResult& r);
Json to_json(const EvalReport& r);
Json to_json(const AsymptoticSummary& s);
Json to_json(const ThresholdResult& t);
Json to_json(const BatchMeansReport& r);
Json to_json(const ContractionReport& r);

std::vector<std::vector<double>> table_rows(const ThresholdTable& t);
std::vector<std::vector<double>> iterate_log_rows(const TrainResult& r);

/// Reads a JSON file (no config merging).
Json read_json_file(const std::filesystem::path& path);

}  // namespace qcdq
