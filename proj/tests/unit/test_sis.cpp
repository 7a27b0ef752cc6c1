#include <doctest.h>

#include <cmath>

#include "qcdq/error.hpp"
#include "qcdq/sis.hpp"

using namespace qcdq;

namespace {
DriftFn gauss_drift(double r) { return DriftFn{IidLlr{IidGaussian{0.0, 1.0}, IidGaussian{0.5, 1.0}}, r}; }
SisSpec cusum(DriftFn d) { return SisSpec{{SisComponent{StatKind::kCusum, d}}}; }
}  // namespace

TEST_CASE("drift examples") {
  CHECK(drift_eval(gauss_drift(0.0), std::nullopt, 0.25) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(drift_eval(gauss_drift(0.02), std::nullopt, 0.0) == doctest::Approx(-0.105).epsilon(1e-14));
  const DriftFn m{MarkovLlr{0.8, 0.5, IidGaussian{0.0, 1.0}}, 0.0};
  CHECK(drift_eval(m, 1.0, 1.0) == doctest::Approx(0.195 - 0.3).epsilon(1e-14));
}

TEST_CASE("closed-form drifts agree with log-density differences") {
  const ObservationLaw pairs[][2] = {
      {IidGaussian{0.0, 1.0}, IidGaussian{0.5, 1.0}},
      {IidLaplace{0.0, kMatchedLaplaceB}, IidLaplace{0.5, kMatchedLaplaceB}},
      {IidCauchy{0.0, kMatchedCauchyGamma}, IidCauchy{0.5, kMatchedCauchyGamma}},
      {IidGaussian{0.0, 1.0}, IidGaussian{0.1, std::sqrt(1.4)}},
  };
  for (const auto& pr : pairs) {
    const DriftFn d{IidLlr{pr[0], pr[1]}, 0.0};
    for (double y = -20.0; y <= 20.0; y += 0.37)
      CHECK(drift_eval(d, std::nullopt, y) ==
            doctest::Approx(log_density(pr[1], y) - log_density(pr[0], y)).epsilon(1e-9));
  }
}

TEST_CASE("Markov laplace and cauchy drifts match log-density ratios") {
  const ObservationLaw innov[] = {IidLaplace{0.0, kMatchedLaplaceB}, IidCauchy{0.0, kMatchedCauchyGamma}};
  for (const auto& f : innov) {
    const DriftFn d{MarkovLlr{0.8, 0.5, f}, 0.0};
    for (double x = -3.0; x <= 3.0; x += 0.7)
      for (double z = -3.0; z <= 3.0; z += 0.9)
        CHECK(drift_eval(d, x, z) ==
              doctest::Approx(log_density(f, z - 0.5 * x) - log_density(f, z - 0.8 * x)).epsilon(1e-9));
  }
}

TEST_CASE("matched cauchy scale") {
  // Cauchy(0, g) CDF at 1 equals Phi(1).
  const double phi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));
  CHECK(0.5 + std::atan(1.0 / kMatchedCauchyGamma) / M_PI == doctest::Approx(phi1).epsilon(1e-11));
}

TEST_CASE("recursion examples") {
  SisSpec spec = cusum(DriftFn{IidLlr{IidGaussian{0.0, 1.0}, IidGaussian{0.0, 1.0}}, -1.0});
  SisState st = sis_reset(spec);
  CHECK(st.s.size() == 1);
  CHECK(st.s(0) == 0.0);
  sis_step_inplace(spec, st, 0.3);
  CHECK(st.s(0) == 0.0);
  spec.components[0].drift.shift = -0.3;
  st.s(0) = 1.2;
  sis_step_inplace(spec, st, 0.0);
  CHECK(st.s(0) == doctest::Approx(0.9).epsilon(1e-15));
  SisSpec sr{{SisComponent{StatKind::kShiryaevRoberts, DriftFn{IidLlr{IidGaussian{}, IidGaussian{}}, 0.0}}}};
  SisState s2 = sis_reset(sr);
  sis_step_inplace(sr, s2, 1.7);
  CHECK(s2.s(0) == doctest::Approx(1.0).epsilon(1e-15));
  SisSpec two{{spec.components[0], spec.components[0]}};
  const SisState z = sis_reset(two);
  CHECK(z.s.size() == 2);
  CHECK(z.s.isZero());
}

TEST_CASE("cusum reflection dominance and null drift") {
  const SisSpec spec = cusum(gauss_drift(0.02));
  Rng rng = make_stream(4, StreamTag::kAuxiliary, 0);
  SisState st = sis_reset(spec);
  for (int i = 0; i < 10'000; ++i) {
    const double y = 3.0 * standard_normal(rng);
    const double f = drift_eval(spec.components[0].drift, std::nullopt, y);
    const double before = st.s(0);
    sis_step_inplace(spec, st, y);
    CHECK(st.s(0) >= 0.0);
    CHECK(st.s(0) >= before + f);
  }
  const SisSpec null_spec = cusum(DriftFn{IidLlr{IidGaussian{0.0, 1.0}, IidGaussian{0.0, 1.0}}, 0.0});
  SisState n = sis_reset(null_spec);
  for (int i = 0; i < 1000; ++i) {
    sis_step_inplace(null_spec, n, 5.0 * standard_normal(rng));
    CHECK(n.s(0) == 0.0);
  }
}

TEST_CASE("Markov drift skips the first step after reset") {
  const SisSpec spec{{SisComponent{StatKind::kCusum, DriftFn{MarkovLlr{0.8, 0.5, IidGaussian{}}, 5.0}}}};
  SisState st = sis_reset(spec);
  CHECK(!st.y_prev.has_value());
  sis_step_inplace(spec, st, 1.0);
  CHECK(st.s(0) == 0.0);
  CHECK(st.y_prev.value() == 1.0);
  sis_step_inplace(spec, st, 1.0);
  CHECK(st.s(0) == doctest::Approx(5.0 - 0.105).epsilon(1e-14));
}

TEST_CASE("Monte Carlo drift means of the matched gaussian drift") {
  const DriftFn d = gauss_drift(0.02);
  Rng rng = make_stream(8, StreamTag::kMonteCarlo, 0);
  double m0 = 0.0, m1 = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    m0 += drift_eval(d, std::nullopt, standard_normal(rng));
    m1 += drift_eval(d, std::nullopt, 0.5 + standard_normal(rng));
  }
  CHECK(std::abs(m0 / n + 0.105) < 0.002);
  CHECK(std::abs(m1 / n - 0.145) < 0.002);
}

TEST_CASE("zero denominator density is an error") {
  // Validation rejects degenerate laws, so the only undefined case is a Markov drift without lag.
  const DriftFn m{MarkovLlr{0.8, 0.5, IidGaussian{}}, 0.0};
  CHECK_THROWS(drift_eval(m, std::nullopt, 1.0));
}
