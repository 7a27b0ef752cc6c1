#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "qcdq/error.hpp"
#include "qcdq/eval.hpp"

using namespace qcdq;

namespace {

SisSpec model1a_spec() {
  return SisSpec{{SisComponent{StatKind::kCusum, DriftFn{IidLlr{IidGaussian{0, 1}, IidGaussian{0.5, 1}}, 0.02}}}};
}

McOptions mc(std::size_t n, std::uint64_t seed = 1) {
  McOptions o;
  o.n_paths = n;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("uniform grid excludes the lower end") {
  const auto g = uniform_grid(0.0, 20.0, 1000);
  CHECK(g.size() == 1000);
  CHECK(g.front() == doctest::Approx(0.02));
  CHECK(g.back() == 20.0);
}

TEST_CASE("threshold sweep: zero threshold, delay and monotonicity") {
  QcdModel m;
  std::vector<double> grid{0.0};
  for (double h : uniform_grid(0.0, 12.0, 60)) grid.push_back(h);
  const ThresholdTable t = threshold_sweep(m, model1a_spec(), grid, mc(100'000));
  CHECK(t.mdd[0] == 0.0);
  CHECK(t.mde[0] == doctest::Approx(49.0).epsilon(0.01));
  const std::size_t i8 = 40;  // h = 8
  REQUIRE(t.grid[i8] == doctest::Approx(8.0));
  CHECK(std::abs(t.mdd[i8] - 8.0 / 0.145) / (8.0 / 0.145) < 0.15);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(t.mde[i] <= t.mde[i - 1] + 3 * t.se_mde[i]);
    CHECK(t.mdd[i] >= t.mdd[i - 1] - 3 * t.se_mdd[i]);
  }
}

TEST_CASE("cusum star") {
  QcdModel m;
  const ThresholdTable t = threshold_sweep(m, model1a_spec(), uniform_grid(0.0, 20.0, 400), mc(20'000));
  const auto z = cusum_star(t, 0.0);
  CHECK(z.index == 0);
  const auto s = cusum_star(t, 100.0);
  CHECK(s.cost == 100.0 * t.mde[s.index] + t.mdd[s.index]);
  CHECK(std::abs(s.h - 8.0) < 1.0);
  double prev = 0.0;
  for (double k : {2.0, 5.0, 10.0, 27.0, 50.0, 100.0}) {
    const auto c = cusum_star(t, k);
    CHECK(c.h >= prev - 0.5);
    prev = c.h;
  }
}

TEST_CASE("shiryaev recursion") {
  // equal densities at y: p' = rho from p = 0
  CHECK(shiryaev_step(0.0, 0.02, -1.3, -1.3) == doctest::Approx(0.02).epsilon(1e-14));
  double p = 0.0;
  for (int k = 1; k <= 200; ++k) {
    p = shiryaev_step(p, 0.02, 0.4, 0.4);
    CHECK(p == doctest::Approx(1.0 - std::pow(0.98, k)).epsilon(1e-12));
  }
  // bounds and the printed formula
  Rng rng = make_stream(1, StreamTag::kAuxiliary, 0);
  for (int i = 0; i < 2000; ++i) {
    const double q = uniform01(rng), l0 = 30 * (uniform01(rng) - 0.5), l1 = 30 * (uniform01(rng) - 0.5);
    const double got = shiryaev_step(q, 0.05, l0, l1);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    const double n = (q + (1 - q) * 0.05) * std::exp(l1);
    CHECK(got == doctest::Approx(n / (n + (1 - q) * 0.95 * std::exp(l0))).epsilon(1e-10));
  }
  QcdModel mx;
  mx.change = Mixture{};
  CHECK_THROWS_WITH_AS(shiryaev_sweep(mx, {0.5}, mc(10)), "Shiryaev recursion requires geometric prior",
                       ValidationError);
}

TEST_CASE("shiryaev beats cusum star on the geometric model") {
  QcdModel m;
  const auto opts = mc(20'000);
  const auto cs = cusum_star(threshold_sweep(m, model1a_spec(), uniform_grid(0.0, 20.0, 400), opts), 27.0);
  const auto sh = cusum_star(shiryaev_sweep(m, uniform_grid(0.0, 1.0, 1000), opts), 27.0);
  CHECK(sh.cost <= cs.cost + 3 * cs.se);
}

TEST_CASE("policy evaluation couples with the sweep") {
  QcdModel m;
  const auto opts = mc(20'000, 4);
  const std::vector<double> grid{3.0, 6.5};
  const ThresholdTable t = threshold_sweep(m, model1a_spec(), grid, opts);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const EvalReport r = eval_policy(m, Policy{model1a_spec(), ThresholdRule{grid[i]}}, 27.0, opts);
    CHECK(r.mde == t.mde[i]);
    CHECK(r.mdd == t.mdd[i]);
    CHECK(r.cost == r.mdd + 27.0 * r.mde);
    CHECK(r.p_fa >= 0.0);
  }
  // always stop: J = kappa E[tau]
  const EvalReport stop = eval_policy(m, Policy{model1a_spec(), ThresholdRule{0.0}}, 2.0, mc(100'000));
  CHECK(stop.mdd == 0.0);
  CHECK(stop.cost == doctest::Approx(2.0 * 49.0).epsilon(0.01));
  // never stop
  McOptions capped = mc(100);
  capped.step_cap = 1000;
  try {
    eval_policy(m, Policy{model1a_spec(), ThresholdRule{1e9}}, 2.0, capped);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).rfind("policy fails to stop", 0) == 0);
  }
}

TEST_CASE("results do not depend on the thread count") {
  QcdModel m;
  McOptions a = mc(5000, 2), b = a;
  b.threads = 3;
  const auto ta = threshold_sweep(m, model1a_spec(), uniform_grid(0, 10, 50), a);
  const auto tb = threshold_sweep(m, model1a_spec(), uniform_grid(0, 10, 50), b);
  CHECK(ta.mde == tb.mde);
  CHECK(ta.mdd == tb.mdd);
  CHECK(ta.se_mdd == tb.se_mdd);
}

TEST_CASE("freedman-diaconis histogram") {
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(i * 0.001);
  const Histogram h = freedman_diaconis(x);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == 1000);
  CHECK(h.edges.size() == h.counts.size() + 1);
  // bin width 2 IQR n^{-1/3} = 2 * 0.5 / 10 = 0.1
  CHECK(h.edges[1] - h.edges[0] == doctest::Approx(0.1).epsilon(0.02));
  const Histogram one = freedman_diaconis(std::vector<double>(10, 2.0));
  CHECK(one.counts.size() == 1);
}

TEST_CASE("batch means with identical seeds centres to zero") {
  QcdModel m;
  Eigen::MatrixXd c(3, 1);
  c << 0.0, 5.0, 12.0;
  const RbfBasis basis = make_basis(c, 0.4, WidthConvention::kScale);
  TrainConfig cfg;
  cfg.n_regens = 50;
  cfg.kappa = 27;
  BatchOptions bo;
  bo.m = 2;
  bo.same_seed = true;
  const BatchMeansReport r = batch_means(m, model1a_spec(), basis, cfg, bo);
  REQUIRE(r.z.cols() == 2);
  CHECK(r.z.isZero());
  CHECK(r.sigma.isZero());
  bo.same_seed = false;
  bo.m = 5;
  const BatchMeansReport r5 = batch_means(m, model1a_spec(), basis, cfg, bo);
  CHECK(r5.sigma.isApprox(r5.sigma.transpose()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r5.sigma);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * r5.sigma.trace());
}

TEST_CASE("decision regions") {
  Eigen::MatrixXd c(3, 2);
  c << 0, 0, 5, 5, 10, 0;
  const QFunction zero{make_basis(c, 0.4), Eigen::VectorXd::Zero(6)};
  const Grid2d g{0, 12, 0, 12, 13, 13};
  for (const auto& cell : decision_region(zero, g, 8, 6)) {
    CHECK(cell.phi == 1);
    CHECK(cell.box == ((cell.s1 >= 8 || cell.s2 >= 6) ? 1 : 0));
  }
}
