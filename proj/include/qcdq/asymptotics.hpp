#pragma once

// Log moment generating functions of a drift under the pre/post-change laws,
// their roots, the optimal drift shift and the large-threshold approximations
// of the CUSUM cost.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "qcdq/model.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

enum class Regime { kPre, kPost };

struct MgfProfile {
  DriftFn drift;
  ObservationLaw pre_law = IidGaussian{0.0, 1.0};
  ObservationLaw post_law = IidGaussian{0.5, 1.0};
  double rho_a = 0.02;
  // Monte Carlo settings, used only for Markov drifts.
  std::size_t mc_samples = 10'000'000;
  std::uint64_t mc_seed = 1;
};

void validate(const MgfProfile& profile);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;  ///< 0 for quadrature results
};

/// Evaluates log E[exp(v F(X))] and E[F(X)] for one profile. I.i.d. drifts use
/// adaptive quadrature; Markov drifts use a fixed Monte Carlo sample of
/// stationary transitions (drawn once, so estimates are smooth in v).
/// Not thread-safe: the Monte Carlo sample is cached on first use.
class LogMgf {
 public:
  explicit LogMgf(MgfProfile profile);
  ~LogMgf();
  LogMgf(LogMgf&&) noexcept;
  LogMgf& operator=(LogMgf&&) noexcept;

  const MgfProfile& profile() const { return profile_; }

  /// Lambda_i(v) for the shifted drift F = L + shift. Throws NumericalError
  /// "Λ infinite at v" when the integral diverges.
  Estimate operator()(Regime which, double v) const;

  /// Same, for the unshifted drift L.
  Estimate unshifted(Regime which, double v) const;

  /// E_i[F] for the shifted drift.
  Estimate mean(Regime which) const;

  /// Lambda_0'' at v by central differences with the given step.
  double second_derivative(double v, double step = 1e-4) const;

 private:
  struct McCache;
  MgfProfile profile_;
  mutable std::unique_ptr<McCache> mc_[2];
  const std::vector<double>& mc_values(Regime which) const;
};

double log_mgf(const MgfProfile& profile, Regime which, double v);

struct AsymptoticSummary {
  double m0 = 0.0;
  double m1 = 0.0;
  double v0 = 0.0;
  double v_plus = 0.0;
  double gamma2 = 0.0;
  double rstar = 0.0;
  double m0_se = 0.0;
  double m1_se = 0.0;
  double root_tolerance = 1e-9;
};

/// (v0, v_plus): nonzero root of Lambda_0 and the solution of Lambda_0(v) = rho_a beyond it.
std::pair<double, double> find_roots(const LogMgf& mgf);
std::pair<double, double> find_roots(const MgfProfile& profile);

/// Optimal additive shift for the unshifted drift of the profile.
double rstar(const LogMgf& mgf);
double rstar(const MgfProfile& profile);

AsymptoticSummary summarize(const MgfProfile& profile);

/// J_inf(kappa, h) = h/m1 + kappa sqrt(h) sqrt(2 pi gamma2) exp(-h v_plus).
double approx_cost(const AsymptoticSummary& summary, double h, double kappa);

struct ThresholdCost {
  double h = 0.0;
  double cost = 0.0;
};

/// (log(kappa)/v_plus, log(kappa)/(m1 v_plus)); requires kappa > 1.
ThresholdCost approx_opt(const AsymptoticSummary& summary, double kappa);

struct Anchor {
  double kappa = 100.0;
  double h = 0.0;
  double cost = 0.0;
};

/// approx_opt shifted so it coincides with the anchor at anchor.kappa.
ThresholdCost shifted_approx(const AsymptoticSummary& summary, double kappa, const Anchor& anchor);

}  // namespace qcdq
