#pragma once

// Mean-flow diagnostics: Monte Carlo estimates of the Q-learning vector field,
// Euler integration of its ODE, the non-separable instability example, and
// exact contraction checks on finite chains.

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "qcdq/basis.hpp"
#include "qcdq/model.hpp"
#include "qcdq/qlearn.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

/// Training chain of a QCD model with a separable RBF basis.
struct QcdFlowSource {
  QcdModel model;
  SisSpec spec;
  RbfBasis basis;
  double kappa = 1.0;
  double eta = 30.0;
  bool regen_on_stop = false;
  std::int64_t burn_in_regens = 1000;
};

/// Symmetric two-state chain on {-1, +1} switching with probability delta,
/// scalar features psi(s, 0) = s and psi(s, 1) = xi s, zero costs, no regeneration.
struct TwoStateSource {
  double xi = 100.0;
  double delta = 1e-4;
};

using FlowSource = std::variant<QcdFlowSource, TwoStateSource>;

struct FlowEstimator {
  FlowSource source;
  double explore_p = 0.5;
  double gamma = 1.0;
  std::size_t n_samples = 100'000;
  std::size_t n_batches = 32;  ///< batch-means standard errors
  std::uint64_t seed = 1;

  Eigen::Index dim() const;
};

void validate(const FlowEstimator& est);

struct FlowEstimate {
  Eigen::VectorXd value;
  Eigen::VectorXd std_error;
};

/// Sample mean of zeta_n D_{n+1}(theta) over n_samples transitions. The sample
/// path depends only on the seed, so repeated calls share random numbers.
FlowEstimate estimate_barf(const FlowEstimator& est, const Eigen::VectorXd& theta);

/// theta^T barf(theta) with its batch-means standard error.
struct InnerProduct {
  double value = 0.0;
  double std_error = 0.0;
};
InnerProduct estimate_theta_dot_barf(const FlowEstimator& est, const Eigen::VectorXd& theta);

struct LinearParts {
  Eigen::MatrixXd r;     ///< E[zeta zeta^T]
  Eigen::MatrixXd r_se;
  Eigen::VectorXd b;     ///< E[zeta c]
  Eigen::VectorXd b_se;
  Eigen::MatrixXd r_minus;  ///< E[(zeta_-)(zeta_-)^T] at the supplied sign direction
  double off_block_max = 0.0;     ///< max |R_ij| over entries coupling the two blocks
  double off_block_max_se = 0.0;  ///< largest standard error among those entries
};

/// Direct estimates of R and b on the same samples as estimate_barf.
LinearParts estimate_linear_parts(const FlowEstimator& est);

struct FlowTrajectory {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> theta;
  std::vector<double> norm;
  std::vector<double> dist_ref;  ///< |theta_t - theta_ref| (empty without a reference)
  bool diverged = false;
};

/// Euler integration of d theta / dt = barf(theta) until t_end or |theta| >= 1e8.
FlowTrajectory integrate_flow(const FlowEstimator& est, const Eigen::VectorXd& theta0, double dt, double t_end,
                              const std::optional<Eigen::VectorXd>& theta_ref = std::nullopt);

/// delta = xi^-2, explore_p = xi^-3, gamma = 0.99.
FlowEstimator counterexample_instance(double xi, std::size_t n_samples = 1'000'000, std::uint64_t seed = 1);

/// Closed-form mean flow slope c of the two-state example: barf(theta) = c theta.
double counterexample_slope(const FlowEstimator& est);

// ---- finite instances ------------------------------------------------------

struct FiniteInstance {
  Eigen::MatrixXd p;    ///< row-stochastic
  Eigen::VectorXd pi;   ///< stationary law (computed when empty)
  Eigen::MatrixXd psi;  ///< n x d features
  std::vector<bool> delta;  ///< regeneration set membership (empty: no state)
};

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& p);

void validate(FiniteInstance& inst);

struct ContractionReport {
  double rho_hat = 0.0;
  Eigen::Index rank_r = 0;
  Eigen::Index rank_sigma_m = 0;  ///< rank of Sigma_{k+1|k} + M^Delta
  Eigen::Index d = 0;
  Eigen::MatrixXd sigma;  ///< conditional covariance R - (P Psi)^T D (P Psi)
  Eigen::MatrixXd m_delta;
};

/// rho_hat = max generalized eigenvalue of (R - Sigma - M^Delta, R), the tight
/// constant in |P_Delta g|^2 <= rho |g|^2 over the span of Psi, where
/// P_Delta g = 1{not Delta} P g. Throws NumericalError with the null space when R is singular.
ContractionReport contraction_check(FiniteInstance inst);

}  // namespace qcdq
