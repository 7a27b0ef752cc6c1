#pragma once

// Monte Carlo benchmarking: threshold tables, CUSUM*, Shiryaev's test,
// policy evaluation, batch means and decision regions.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "qcdq/basis.hpp"
#include "qcdq/model.hpp"
#include "qcdq/qlearn.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

struct McOptions {
  std::size_t n_paths = 100'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::int64_t step_cap = 1'000'000;
};

struct ThresholdTable {
  std::vector<double> grid;
  std::vector<double> mde, mdd, se_mde, se_mdd;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
  std::size_t capped_paths = 0;  ///< paths that hit the step cap before crossing the largest threshold
};

/// Uniform grid lo + (hi - lo) t / n, t = 1..n (excludes lo).
std::vector<double> uniform_grid(double lo, double hi, std::size_t n);

/// One pass per path: first crossing times of the SIS for every threshold.
/// Path i uses the substream (seed, kEvalPath, i).
ThresholdTable threshold_sweep(const QcdModel& model, const SisSpec& spec, const std::vector<double>& grid,
                               const McOptions& opts);

struct CusumStar {
  double h = 0.0;
  double cost = 0.0;
  double se = 0.0;  ///< from the MDD and MDE standard errors (treated as independent)
  std::size_t index = 0;
};

/// Grid argmin of kappa MDE(h) + MDD(h); ties go to the smaller h.
CusumStar cusum_star(const ThresholdTable& table, double kappa);

struct ShiryaevOptions {
  /// Prior rate used by the recursion. Required when the change law is not geometric.
  std::optional<double> rho;
};

/// Posterior of {tau_a <= k} after y_0..y_k, from p_{-1} = 0:
/// p' = N / (N + (1 - p)(1 - rho) f0(y)), N = (p + (1 - p) rho) f1(y).
/// Implemented on the log-odds scale.
double shiryaev_step(double p, double rho, double log_f0, double log_f1);

/// Threshold sweep of the Shiryaev statistic using the model's true densities.
ThresholdTable shiryaev_sweep(const QcdModel& model, const std::vector<double>& grid, const McOptions& opts,
                              const ShiryaevOptions& sopts = {});

// ---- policy evaluation -----------------------------------------------------

struct ThresholdRule {
  double h = 0.0;
};
/// Stop iff s_i >= h_i for some i.
struct BoxRule {
  std::vector<double> h;
};
/// Stop iff the Shiryaev posterior reaches h.
struct ShiryaevRule {
  double h = 0.5;
  double rho = 0.02;
};

using StopRule = std::variant<ThresholdRule, BoxRule, QFunction, ShiryaevRule>;

struct Policy {
  SisSpec spec;  ///< unused by ShiryaevRule
  StopRule rule;
};

struct EvalReport {
  double mdd = 0.0, mde = 0.0, cost = 0.0, p_fa = 0.0;
  double se_mdd = 0.0, se_mde = 0.0, se_cost = 0.0, se_p_fa = 0.0;
  double kappa = 0.0;
  std::size_t n_paths = 0;
  std::size_t capped_paths = 0;
};

/// Throws NumericalError "policy fails to stop" when more than 1% of paths hit the cap.
EvalReport eval_policy(const QcdModel& model, const Policy& policy, double kappa, const McOptions& opts);

// ---- batch means -----------------------------------------------------------

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

/// Freedman-Diaconis binning (a single bin when the IQR is zero).
Histogram freedman_diaconis(const std::vector<double>& x);

struct BatchRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Eigen::VectorXd theta;
  std::int64_t sample_count = 0;
  std::optional<double> threshold;  ///< H(theta) when the SIS is one-dimensional and the policy has threshold form
};

struct BatchMeansReport {
  std::size_t m = 0;
  std::vector<BatchRun> runs;
  Eigen::VectorXd theta_bar;
  Eigen::MatrixXd z;      ///< one column per successful run
  Eigen::MatrixXd sigma;  ///< empirical covariance of Z, (n - 1) normalized
  std::vector<double> thresholds;
  Histogram threshold_hist;
  std::vector<Histogram> z_hist;  ///< per coordinate
  bool sigma_valid = false;
};

struct BatchOptions {
  std::size_t m = 40;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool same_seed = false;  ///< every run uses the master seed
  ScanGrid scan;
};

BatchMeansReport batch_means(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis,
                             const TrainConfig& cfg, const BatchOptions& opts);

/// Assembles Z, theta_bar and Sigma from finished runs.
void finish_batch_means(BatchMeansReport& report);

// ---- decision regions ------------------------------------------------------

struct Grid2d {
  double lo1 = 0.0, hi1 = 30.0;
  double lo2 = 0.0, hi2 = 30.0;
  std::size_t n1 = 121, n2 = 121;
};

struct RegionCell {
  double s1 = 0.0, s2 = 0.0;
  int phi = 0;
  int box = 0;
};

std::vector<RegionCell> decision_region(const QFunction& qf, const Grid2d& grid, double h1, double h2);

}  // namespace qcdq
