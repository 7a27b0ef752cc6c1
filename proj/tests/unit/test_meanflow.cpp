#include <doctest.h>

#include <cmath>

#include "qcdq/error.hpp"
#include "qcdq/meanflow.hpp"

using namespace qcdq;

namespace {

FlowEstimator model1a_flow(double gamma, double kappa, std::size_t n, std::uint64_t seed) {
  QcdModel m;
  Eigen::MatrixXd c(4, 1);
  c << 0.0, 4.0, 9.0, 18.0;
  QcdFlowSource src{m, SisSpec{{SisComponent{StatKind::kCusum,
                                             DriftFn{IidLlr{IidGaussian{0, 1}, IidGaussian{0.5, 1}}, 0.02}}}},
                    make_basis(c, 0.4, WidthConvention::kScale), kappa, 30.0, false, 50};
  FlowEstimator est;
  est.source = src;
  est.gamma = gamma;
  est.n_samples = n;
  est.seed = seed;
  return est;
}

Eigen::MatrixXd random_stochastic(int n, Rng& rng) {
  Eigen::MatrixXd p(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p(i, j) = 0.05 + uniform01(rng);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Oracle: max over random directions of |P_Delta g|^2 / |g|^2 in the pi-norm.
double random_ratio(const FiniteInstance& inst, int n_dir, Rng& rng) {
  const Eigen::VectorXd pi = stationary_distribution(inst.p);
  double best = 0.0;
  for (int t = 0; t < n_dir; ++t) {
    Eigen::VectorXd th(inst.psi.cols());
    for (Eigen::Index j = 0; j < th.size(); ++j) th(j) = standard_normal(rng);
    const Eigen::VectorXd g = inst.psi * th;
    Eigen::VectorXd pg = inst.p * g;
    for (Eigen::Index i = 0; i < pg.size(); ++i)
      if (!inst.delta.empty() && inst.delta[i]) pg(i) = 0.0;
    best = std::max(best, pi.dot(pg.cwiseAbs2()) / pi.dot(g.cwiseAbs2()));
  }
  return best;
}

}  // namespace

TEST_CASE("counterexample parameters and slope") {
  const FlowEstimator est = counterexample_instance(100.0, 200'000, 1);
  const auto& ts = std::get<TwoStateSource>(est.source);
  CHECK(ts.delta == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(est.explore_p == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(est.gamma == 0.99);
  // Independent derivation: with s = +-1 equally likely, D = -theta s^2 + gamma min(theta s', xi theta s') s.
  const double p0 = 1 - 1e-6, p1 = 1e-6, g = 0.99, xi = 100, dl = 1e-4;
  const double c = -p1 * xi * xi + p0 * (-1 + g * (1 - 2 * dl) * (1 + xi) / 2);
  CHECK(counterexample_slope(est) == doctest::Approx(c).epsilon(1e-3));
  CHECK(estimate_barf(est, Eigen::VectorXd::Zero(1)).value.isZero());
  const FlowEstimate f1 = estimate_barf(est, Eigen::VectorXd::Ones(1));
  CHECK(std::abs(f1.value(0) - c) <= 3 * f1.std_error(0));
  for (double th : {1.0, -1.0}) {
    const auto ip = estimate_theta_dot_barf(est, Eigen::VectorXd::Constant(1, th));
    CHECK(ip.value > 0.0);
  }
}

TEST_CASE("counterexample: R minus is half of R") {
  FlowEstimator est = counterexample_instance(100.0, 400'000, 2);
  const LinearParts lp = estimate_linear_parts(est);
  CHECK(lp.r_minus(0, 0) == doctest::Approx(0.5 * lp.r(0, 0)).epsilon(0.2));
}

TEST_CASE("zero costs: the flow vanishes at the origin and stays put") {
  FlowEstimator est = counterexample_instance(100.0, 10'000, 3);
  const FlowTrajectory tr = integrate_flow(est, Eigen::VectorXd::Zero(1), 0.1, 1.0);
  for (double n : tr.norm) CHECK(n == 0.0);
  CHECK(!tr.diverged);
  CHECK_THROWS_AS(integrate_flow(est, Eigen::VectorXd::Zero(1), 0.2, 1.0), ValidationError);
}

TEST_CASE("counterexample flow diverges") {
  FlowEstimator est = counterexample_instance(100.0, 50'000, 4);
  const FlowTrajectory tr = integrate_flow(est, Eigen::VectorXd::Ones(1), 0.01, 10.0);
  CHECK(tr.diverged);
  for (std::size_t i = 1; i < tr.norm.size(); ++i) CHECK(tr.norm[i] > tr.norm[i - 1]);
}

TEST_CASE("gamma = 0: barf is -R theta + b") {
  const FlowEstimator est = model1a_flow(0.0, 2.0, 200'000, 5);
  const LinearParts lp = estimate_linear_parts(est);
  Eigen::VectorXd th = Eigen::VectorXd::LinSpaced(8, -3, 5);
  const FlowEstimate f = estimate_barf(est, th);
  const Eigen::VectorXd lin = -lp.r * th + lp.b;
  for (Eigen::Index i = 0; i < th.size(); ++i) CHECK(std::abs(f.value(i) - lin(i)) <= 3 * f.std_error(i) + 1e-9);
  // separable basis: off-block entries of R vanish
  CHECK(lp.off_block_max <= 3 * lp.off_block_max_se);
}

TEST_CASE("standard errors shrink like n^-1/2") {
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(8, 1.0);
  const FlowEstimate a = estimate_barf(model1a_flow(1.0, 2.0, 10'000, 6), th);
  const FlowEstimate b = estimate_barf(model1a_flow(1.0, 2.0, 1'000'000, 6), th);
  const double ratio = b.std_error.norm() / a.std_error.norm();
  CHECK(ratio >= 0.05);
  CHECK(ratio <= 0.15);
}

TEST_CASE("contraction: constants, full regeneration and random directions") {
  Rng rng = make_stream(10, StreamTag::kAuxiliary, 0);
  FiniteInstance inst;
  inst.p = random_stochastic(3, rng);
  inst.psi = Eigen::MatrixXd::Ones(3, 1);
  CHECK(std::abs(contraction_check(inst).rho_hat - 1.0) < 1e-10);
  inst.delta = {true, true, true};
  CHECK(std::abs(contraction_check(inst).rho_hat) < 1e-10);

  FiniteInstance nc;
  nc.p = random_stochastic(3, rng);
  nc.psi = Eigen::MatrixXd(3, 2);
  nc.psi << 1, 0, 0, 1, 2, -1;
  const ContractionReport rep = contraction_check(nc);
  CHECK(rep.rho_hat < 1.0);
  CHECK(std::abs(rep.rho_hat - random_ratio(nc, 10'000, rng)) < 1e-3);
  CHECK(rep.rank_r == 2);

  // invariance under reparameterisation of the span
  FiniteInstance re = nc;
  Eigen::MatrixXd t(2, 2);
  t << 2, 1, -1, 3;
  re.psi = nc.psi * t;
  CHECK(contraction_check(re).rho_hat == doctest::Approx(rep.rho_hat).epsilon(1e-10));

  FiniteInstance sing = nc;
  sing.psi.col(1) = 2 * sing.psi.col(0);
  CHECK_THROWS_AS(contraction_check(sing), NumericalError);
}

TEST_CASE("stationary distribution") {
  Rng rng = make_stream(11, StreamTag::kAuxiliary, 0);
  const Eigen::MatrixXd p = random_stochastic(6, rng);
  const Eigen::VectorXd pi = stationary_distribution(p);
  CHECK((pi.transpose() * p - pi.transpose()).norm() < 1e-12);
  CHECK(pi.sum() == doctest::Approx(1.0).epsilon(1e-14));
}
