#pragma once

// Surrogate information state: CUSUM and Shiryaev-Roberts recursions driven
// by (shifted) log-likelihood-ratio drifts.

#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "qcdq/model.hpp"

namespace qcdq {

/// log(f1(y) / f0(y)) for a pair of i.i.d. densities.
struct IidLlr {
  ObservationLaw breve0;
  ObservationLaw breve1;
};

/// Transition LLR log(g1(x, z) / g0(x, z)) with g_i(x, z) = f(z - a_i x) for an
/// innovation density f (gaussian, laplace or cauchy; its location is ignored).
struct MarkovLlr {
  double a0 = 0.8;
  double a1 = 0.5;
  ObservationLaw innovation = IidGaussian{0.0, 1.0};
};

struct DriftFn {
  std::variant<IidLlr, MarkovLlr> llr;
  double shift = 0.0;

  bool is_markov() const { return std::holds_alternative<MarkovLlr>(llr); }
};

void validate(const DriftFn& drift);

enum class StatKind { kCusum, kShiryaevRoberts };

struct SisComponent {
  StatKind kind = StatKind::kCusum;
  DriftFn drift;
};

struct SisSpec {
  std::vector<SisComponent> components;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(components.size()); }
  bool needs_lag() const;
};

void validate(const SisSpec& spec);

struct SisState {
  Eigen::VectorXd s;
  std::optional<double> y_prev;
};

/// Drift value at observation y. Markov drifts require y_prev.
double drift_eval(const DriftFn& drift, std::optional<double> y_prev, double y);

SisState sis_reset(const SisSpec& spec);

/// One recursion step. Markov components emit F = 0 while the lag is unset.
SisState sis_step(const SisSpec& spec, const SisState& state, double y);
void sis_step_inplace(const SisSpec& spec, SisState& state, double y);

/// Gamma with Cauchy(0, gamma) CDF at 1 equal to the standard normal CDF at 1.
inline constexpr double kMatchedCauchyGamma = 0.544265907858;

/// Laplace scale sqrt(1/2) matching unit variance.
inline constexpr double kMatchedLaplaceB = 0.7071067811865476;

}  // namespace qcdq
