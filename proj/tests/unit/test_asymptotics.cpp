#include <doctest.h>

#include <cmath>
#include <functional>

#include "qcdq/asymptotics.hpp"
#include "qcdq/error.hpp"

using namespace qcdq;

namespace {

MgfProfile matched_gaussian(double r) {
  MgfProfile p;
  p.drift = DriftFn{IidLlr{IidGaussian{0.0, 1.0}, IidGaussian{0.5, 1.0}}, r};
  p.pre_law = IidGaussian{0.0, 1.0};
  p.post_law = IidGaussian{0.5, 1.0};
  p.rho_a = 0.02;
  return p;
}

MgfProfile mismatched(const ObservationLaw& b0, const ObservationLaw& b1, const ObservationLaw& pre,
                      const ObservationLaw& post) {
  MgfProfile p;
  p.drift = DriftFn{IidLlr{b0, b1}, 0.0};
  p.pre_law = pre;
  p.post_law = post;
  p.rho_a = 0.02;
  return p;
}

// Independent route: composite Simpson rule on a wide fixed window.
double simpson_log_mgf(const std::function<double(double)>& log_f, const std::function<double(double)>& drift,
                       double v, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(log_f(x) + v * drift(x));
  }
  return std::log(acc * h / 3.0);
}

// r* by brute force: grid minimisation over v of Lambda0(v) - v pi1(F).
double rstar_grid(const std::function<double(double)>& lam0, double pi1) {
  double best_v = 0.0, best = 1e300;
  for (double v = 0.01; v <= 4.0; v += 1e-3) {
    const double val = lam0(v) - v * pi1;
    if (val < best) best = val, best_v = v;
  }
  for (double step = 1e-4; step >= 1e-7; step /= 10) {
    for (double v = best_v - 10 * step; v <= best_v + 10 * step; v += step) {
      const double val = lam0(v) - v * pi1;
      if (val < best) best = val, best_v = v;
    }
  }
  return (0.02 - lam0(best_v)) / best_v;
}

}  // namespace

TEST_CASE("log mgf examples") {
  const auto p0 = matched_gaussian(0.0);
  CHECK(log_mgf(p0, Regime::kPre, 0.0) == 0.0);
  CHECK(std::abs(log_mgf(p0, Regime::kPre, 1.0)) < 1e-8);
  const auto p = matched_gaussian(0.02);
  for (double v : {0.3, 1.0, 1.7})
    CHECK(log_mgf(p, Regime::kPre, v) == doctest::Approx(0.125 * v * v - 0.105 * v).epsilon(1e-10));
  // post-change: F ~ N(0.145, 0.25)
  CHECK(log_mgf(p, Regime::kPost, 1.3) == doctest::Approx(0.145 * 1.3 + 0.125 * 1.69).epsilon(1e-10));
}

TEST_CASE("quadrature agrees with an independent rule for laplace and cauchy pairs") {
  const double b = kMatchedLaplaceB, g = kMatchedCauchyGamma;
  // Model 1b: gaussian observations, laplace-matched drift
  const auto pb = mismatched(IidLaplace{0, b}, IidLaplace{0.5, b}, IidGaussian{0, 1}, IidGaussian{0.5, 1});
  auto drift_b = [&](double y) { return (std::abs(y) - std::abs(y - 0.5)) / b; };
  auto logn = [](double y) { return -0.5 * y * y - 0.5 * std::log(2 * M_PI); };
  for (double v : {0.5, 1.0, 2.0})
    CHECK(log_mgf(pb, Regime::kPre, v) ==
          doctest::Approx(simpson_log_mgf(logn, drift_b, v, -40, 40, 400'000)).epsilon(1e-9));
  const auto pc = mismatched(IidCauchy{0, g}, IidCauchy{0.5, g}, IidGaussian{0, 1}, IidGaussian{0.5, 1});
  auto drift_c = [&](double y) { return std::log((g * g + y * y) / (g * g + (y - 0.5) * (y - 0.5))); };
  for (double v : {0.5, 1.0, 2.0})
    CHECK(log_mgf(pc, Regime::kPre, v) ==
          doctest::Approx(simpson_log_mgf(logn, drift_c, v, -40, 40, 400'000)).epsilon(1e-9));
}

TEST_CASE("divergent mgf is reported") {
  // Gaussian drift under Cauchy observations: E exp(v y / 2) is infinite.
  const auto p = mismatched(IidGaussian{0, 1}, IidGaussian{0.5, 1}, IidCauchy{0, 1}, IidCauchy{0.5, 1});
  CHECK_THROWS_AS(log_mgf(p, Regime::kPre, 0.5), NumericalError);
}

TEST_CASE("roots of the matched gaussian drift") {
  const auto [v0, vp] = find_roots(matched_gaussian(0.02));
  CHECK(std::abs(v0 - 0.84) < 1e-6);
  CHECK(std::abs(vp - 1.0) < 1e-6);
  CHECK(v0 < vp);
}

TEST_CASE("(A1) violation") {
  auto p = matched_gaussian(0.2);  // m0 = 0.075 > 0
  CHECK_THROWS_AS(find_roots(p), ValidationError);
}

TEST_CASE("r* against brute-force minimisation") {
  CHECK(std::abs(rstar(matched_gaussian(0.0)) - 0.02) < 1e-6);
  const double b = kMatchedLaplaceB, g = kMatchedCauchyGamma;
  auto logn = [](double y) { return -0.5 * y * y - 0.5 * std::log(2 * M_PI); };
  auto logn1 = [](double y) { return -0.5 * (y - 0.5) * (y - 0.5) - 0.5 * std::log(2 * M_PI); };
  struct Case {
    MgfProfile p;
    std::function<double(double)> drift;
    double expected;
  } cases[] = {
      {mismatched(IidLaplace{0, b}, IidLaplace{0.5, b}, IidGaussian{0, 1}, IidGaussian{0.5, 1}),
       [=](double y) { return (std::abs(y) - std::abs(y - 0.5)) / b; }, 0.031},
      {mismatched(IidCauchy{0, g}, IidCauchy{0.5, g}, IidGaussian{0, 1}, IidGaussian{0.5, 1}),
       [=](double y) { return std::log((g * g + y * y) / (g * g + (y - 0.5) * (y - 0.5))); }, 0.036},
  };
  for (auto& c : cases) {
    auto lam0 = [&](double v) { return simpson_log_mgf(logn, c.drift, v, -30, 30, 60'000); };
    double pi1 = 0.0;
    {
      const int n = 60'000;
      const double h = 60.0 / n;
      for (int i = 0; i <= n; ++i) {
        const double x = -30 + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        pi1 += w * std::exp(logn1(x)) * c.drift(x);
      }
      pi1 *= h / 3.0;
    }
    const double oracle = rstar_grid(lam0, pi1);
    const double got = rstar(c.p);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(std::abs(got - c.expected) <= 0.005);
  }
}

TEST_CASE("summary invariants and gamma2 step robustness") {
  const double g = kMatchedCauchyGamma;
  auto p = mismatched(IidCauchy{0, g}, IidCauchy{0.5, g}, IidGaussian{0, 1}, IidGaussian{0.5, 1});
  p.drift.shift = rstar(p);
  const AsymptoticSummary s = summarize(p);
  CHECK(s.m0 < 0.0);
  CHECK(s.m1 > 0.0);
  CHECK(0.0 < s.v0);
  CHECK(s.v0 < s.v_plus);
  CHECK(s.gamma2 > 0.0);
  const LogMgf mgf(p);
  const double g3 = mgf.second_derivative(s.v_plus, 1e-3) / std::pow(s.v_plus, 3);
  const double g4 = mgf.second_derivative(s.v_plus, 1e-4) / std::pow(s.v_plus, 3);
  CHECK(g3 == doctest::Approx(g4).epsilon(5e-5));
  CHECK(s.gamma2 == doctest::Approx(g4).epsilon(1e-12));
}

TEST_CASE("Lambda0 convexity on a grid") {
  const double b = kMatchedLaplaceB;
  const auto p = mismatched(IidLaplace{0, b}, IidLaplace{0.5, b}, IidGaussian{0, 1}, IidGaussian{0.5, 1});
  const LogMgf mgf(p);
  std::vector<double> vals;
  for (int i = 0; i < 100; ++i) vals.push_back(mgf(Regime::kPre, -1.0 + 0.04 * i).value);
  for (int i = 1; i + 1 < 100; ++i) CHECK(vals[i + 1] - 2 * vals[i] + vals[i - 1] >= -1e-8);
}

TEST_CASE("approximate cost formula") {
  AsymptoticSummary s;
  s.m1 = 0.145;
  s.v_plus = 1.0;
  s.gamma2 = 0.25;
  // 8/0.145 + 100 sqrt(8) sqrt(pi/2) e^-8, each factor evaluated separately
  const double eager = 100.0 * 2.8284271247461903 * 1.2533141373155003 * 3.3546262790251185e-4;
  CHECK(approx_cost(s, 8.0, 100.0) == doctest::Approx(55.172413793103445 + eager).epsilon(1e-12));
  CHECK(approx_cost(s, 8.0, 1e-300) == doctest::Approx(8.0 / 0.145).epsilon(1e-14));
  CHECK(approx_cost(s, 500.0, 100.0) / (500.0 / 0.145) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("approximate optimum and its anchored shift") {
  AsymptoticSummary s;
  s.m1 = 0.145;
  s.v_plus = 1.0;
  s.gamma2 = 0.25;
  const auto a = approx_opt(s, 100.0);
  CHECK(a.h == doctest::Approx(4.605170185988091).epsilon(1e-12));
  CHECK(std::abs(a.cost - 31.76) < 0.01);
  AsymptoticSummary unit = s;
  unit.m1 = 1.0;
  const auto e = approx_opt(unit, std::exp(1.0));
  CHECK(e.h == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e.cost == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(approx_opt(s, 1.0), ValidationError);

  const Anchor anc{100.0, 8.0, 60.0};
  const auto at0 = shifted_approx(s, 100.0, anc);
  CHECK(at0.h == 8.0);
  CHECK(at0.cost == 60.0);
  const auto h50 = shifted_approx(s, 50.0, anc);
  CHECK(h50.h == doctest::Approx(8.0 - std::log(2.0)).epsilon(1e-12));
  const auto h20 = shifted_approx(s, 20.0, anc);
  CHECK(h50.h - h20.h == doctest::Approx(std::log(50.0 / 20.0)).epsilon(1e-12));

  // grid argmin of approx_cost approaches log(kappa)/v_plus
  const double kappa = 1e6;
  double best_h = 0.0, best = 1e300;
  for (double h = 0.01; h < 100.0; h += 1e-3) {
    const double c = approx_cost(s, h, kappa);
    if (c < best) best = c, best_h = h;
  }
  CHECK(std::abs(best_h * s.v_plus / std::log(kappa) - 1.0) < 0.05);
}

TEST_CASE("Markov drift Monte Carlo profile") {
  MgfProfile p;
  p.drift = DriftFn{MarkovLlr{0.8, 0.5, IidGaussian{0.0, 1.0}}, 0.0};
  p.pre_law = Ar1{0.8, 1.0};
  p.post_law = Ar1{0.5, 1.0};
  p.mc_samples = 200'000;
  const LogMgf mgf(p);
  // Stationary pre-change: x ~ N(0, 1/0.36); F = 0.195 x^2 - 0.3 x z with z = 0.8x + w
  // => F = (0.195 - 0.24) x^2 - 0.3 x w, mean = -0.045 / 0.36 = -0.125.
  const auto m0 = mgf.mean(Regime::kPre);
  CHECK(std::abs(m0.value + 0.125) < 4 * m0.std_error);
  CHECK(m0.std_error > 0.0);
  CHECK(mgf(Regime::kPre, 0.0).value == 0.0);
}
