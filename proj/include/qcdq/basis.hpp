#pragma once

// Separable Gaussian RBF features psi(s, u) = [(1 - u) psi0(s); u psi1(s)],
// with centers fitted by k-means on sampled SIS points.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "qcdq/model.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

/// kPrecision: exp(-sigma^2 |s - mu|^2 / 2). kScale: exp(-|s - mu|^2 / (2 sigma^2)).
enum class WidthConvention { kPrecision, kScale };

struct RbfBasis {
  Eigen::MatrixXd centers;  ///< K x D, one center per row
  Eigen::VectorXd widths;   ///< sigma_i = b * min_{l != i} |mu_i - mu_l|
  double b = 0.4;
  WidthConvention convention = WidthConvention::kPrecision;

  Eigen::Index size() const { return centers.rows(); }
  Eigen::Index sis_dim() const { return centers.cols(); }
  Eigen::Index feature_dim() const { return 2 * centers.rows(); }
};

void validate(const RbfBasis& basis);

/// Builds a basis from fixed centers, computing widths by the min-distance rule.
RbfBasis make_basis(Eigen::MatrixXd centers, double b, WidthConvention convention = WidthConvention::kPrecision);

struct KMeansOptions {
  int n_init = 10;
  int max_iter = 100;
  double rel_tol = 1e-6;
};

struct KMeansResult {
  Eigen::MatrixXd centers;  ///< sorted lexicographically
  double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding; best of n_init restarts.
KMeansResult kmeans(const Eigen::MatrixXd& samples, Eigen::Index k, Rng& rng, const KMeansOptions& opts = {});

double kmeans_inertia(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers);

/// Throws ValidationError "K distinct centers unavailable" when the samples
/// (rows) do not support K distinct centers.
RbfBasis fit_centers(const Eigen::MatrixXd& samples, Eigen::Index k, double b, Rng& rng,
                     WidthConvention convention = WidthConvention::kPrecision,
                     const KMeansOptions& opts = {});

/// The K radial values psi^{(j)}(s) shared by both blocks.
Eigen::VectorXd rbf_values(const RbfBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& s);

/// Full 2K feature vector with block u populated.
Eigen::VectorXd features(const RbfBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& s, int u);

/// SIS samples for center fitting: n_paths uncontrolled paths, each run from
/// reset until |S|_inf >= eta, contributing the state at one uniformly chosen
/// time. Path i uses substream (seed, kBasisPath, i).
Eigen::MatrixXd sample_sis_points(const QcdModel& model, const SisSpec& spec, std::size_t n_paths, double eta,
                                  std::uint64_t seed, unsigned threads = 1);

}  // namespace qcdq
