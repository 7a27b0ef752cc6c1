#include "qcdq/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "qcdq/error.hpp"

namespace qcdq {

namespace {

constexpr double kRelTol = 1e-13;
constexpr double kOverflowGuard = 1e300;
constexpr double kSearchMax = 50.0;

[[noreturn]] void throw_infinite(double v) {
  std::ostringstream os;
  os << "Λ infinite at v = " << v;
  throw NumericalError(os.str());
}

const ObservationLaw& regime_law(const MgfProfile& p, Regime which) {
  return which == Regime::kPre ? p.pre_law : p.post_law;
}

// Scale and centre of an i.i.d. law, used to place quadrature breakpoints.
std::pair<double, double> centre_scale(const ObservationLaw& law) {
  if (auto* g = std::get_if<IidGaussian>(&law)) return {g->mu, g->sigma};
  if (auto* l = std::get_if<IidLaplace>(&law)) return {l->mu, l->b};
  if (auto* c = std::get_if<IidCauchy>(&law)) return {c->x0, c->gamma};
  throw ValidationError("i.i.d. observation law required");
}

void add_kinks(const ObservationLaw& law, std::vector<double>& out) {
  out.push_back(centre_scale(law).first);
}

// Breakpoints: data centre, drift density centres (Laplace kinks, Cauchy
// peaks), and a core interval of several scales around them. Outside the core
// the integrand is handled by exp-sinh on each half line.
std::vector<double> breakpoints(const MgfProfile& p, Regime which) {
  const auto& law = regime_law(p, which);
  const auto [c, s] = centre_scale(law);
  std::vector<double> pts{c};
  const auto& llr = std::get<IidLlr>(p.drift.llr);
  add_kinks(llr.breve0, pts);
  add_kinks(llr.breve1, pts);
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end());
  const double width = 8.0 * s;
  const double a = *lo - width;
  const double b = *hi + width;
  pts.push_back(a);
  pts.push_back(b);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

// Integral over the real line of exp(h(y)) where h is finite everywhere.
// Returns +inf on divergence.
template <class H>
double integrate_exp(const std::vector<double>& pts, H&& h) {
  using boost::math::quadrature::exp_sinh;
  using boost::math::quadrature::gauss_kronrod;
  auto g = [&](double y) {
    const double e = h(y);
    const double r = std::exp(e);
    if (!std::isfinite(r)) throw std::overflow_error("integrand overflow");
    return r;
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double err = 0.0;
    total += gauss_kronrod<double, 61>::integrate(g, pts[i], pts[i + 1], 15, kRelTol, &err);
  }
  const double a = pts.front();
  const double b = pts.back();
  exp_sinh<double> tail;
  double err_r = 0.0, err_l = 0.0, l1 = 0.0;
  const double right = tail.integrate([&](double t) { return g(b + t); }, 0.0,
                                      std::numeric_limits<double>::infinity(), 1e-12, &err_r, &l1);
  const double left = tail.integrate([&](double t) { return g(a - t); }, 0.0,
                                     std::numeric_limits<double>::infinity(), 1e-12, &err_l, &l1);
  total += right + left;
  // exp-sinh returns large error estimates when the tail does not decay.
  if (err_r > 1e-6 * std::max(1.0, std::abs(right)) || err_l > 1e-6 * std::max(1.0, std::abs(left)))
    return std::numeric_limits<double>::infinity();
  return total;
}

// Signed integral of L(y) f(y) over the real line. Returns NaN on divergence.
template <class H>
double integrate_signed(const std::vector<double>& pts, H&& h) {
  using boost::math::quadrature::exp_sinh;
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double err = 0.0;
    total += gauss_kronrod<double, 61>::integrate(h, pts[i], pts[i + 1], 15, kRelTol, &err);
  }
  const double a = pts.front();
  const double b = pts.back();
  exp_sinh<double> tail;
  double err_r = 0.0, err_l = 0.0, l1 = 0.0;
  const double right = tail.integrate([&](double t) { return h(b + t); }, 0.0,
                                      std::numeric_limits<double>::infinity(), 1e-12, &err_r, &l1);
  const double left = tail.integrate([&](double t) { return h(a - t); }, 0.0,
                                     std::numeric_limits<double>::infinity(), 1e-12, &err_l, &l1);
  if (!std::isfinite(right) || !std::isfinite(left) || err_r > 1e-6 * std::max(1.0, std::abs(right)) ||
      err_l > 1e-6 * std::max(1.0, std::abs(left)))
    return std::numeric_limits<double>::quiet_NaN();
  return total + right + left;
}

DriftFn unshifted_drift(const DriftFn& d) {
  DriftFn out = d;
  out.shift = 0.0;
  return out;
}

}  // namespace

void validate(const MgfProfile& profile) {
  validate(profile.drift);
  validate(profile.pre_law);
  validate(profile.post_law);
  if (!(profile.rho_a > 0.0) || !std::isfinite(profile.rho_a))
    throw ValidationError("rho_a must be positive");
  if (profile.drift.is_markov()) {
    if (!std::holds_alternative<Ar1>(profile.pre_law) || !std::holds_alternative<Ar1>(profile.post_law))
      throw ValidationError("Markov drift requires Ar1 observation laws");
    if (profile.mc_samples < 2) throw ValidationError("mc_samples must be at least 2");
  } else if (!is_iid(profile.pre_law) || !is_iid(profile.post_law)) {
    throw ValidationError("i.i.d. drift requires i.i.d. observation laws");
  }
}

struct LogMgf::McCache {
  std::vector<double> values;  // unshifted transition LLR samples
};

LogMgf::LogMgf(MgfProfile profile) : profile_(std::move(profile)) { validate(profile_); }
LogMgf::~LogMgf() = default;
LogMgf::LogMgf(LogMgf&&) noexcept = default;
LogMgf& LogMgf::operator=(LogMgf&&) noexcept = default;

const std::vector<double>& LogMgf::mc_values(Regime which) const {
  const int idx = which == Regime::kPre ? 0 : 1;
  if (!mc_[idx]) {
    auto cache = std::make_unique<McCache>();
    const Ar1 law = std::get<Ar1>(regime_law(profile_, which));
    const double sd = ar1_stationary_sd(law);
    const DriftFn drift = unshifted_drift(profile_.drift);
    Rng rng = make_stream(profile_.mc_seed, StreamTag::kMonteCarlo, static_cast<std::uint64_t>(idx));
    cache->values.resize(profile_.mc_samples);
    for (auto& value : cache->values) {
      const double x = sd * standard_normal(rng);
      const double z = law.a * x + law.sigma_w * standard_normal(rng);
      value = drift_eval(drift, x, z);
    }
    mc_[idx] = std::move(cache);
  }
  return mc_[idx]->values;
}

Estimate LogMgf::unshifted(Regime which, double v) const {
  if (v == 0.0) return {0.0, 0.0};
  if (profile_.drift.is_markov()) {
    const auto& xs = mc_values(which);
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, v * x);
    if (!std::isfinite(m)) throw_infinite(v);
    double s1 = 0.0, s2 = 0.0;
    for (double x : xs) {
      const double w = std::exp(v * x - m);
      s1 += w;
      s2 += w * w;
    }
    const double n = static_cast<double>(xs.size());
    const double mean = s1 / n;
    const double var = std::max(0.0, (s2 / n - mean * mean) * n / (n - 1.0));
    return {m + std::log(mean), std::sqrt(var / n) / mean};
  }
  const auto& law = regime_law(profile_, which);
  const DriftFn drift = unshifted_drift(profile_.drift);
  double value = 0.0;
  try {
    value = integrate_exp(breakpoints(profile_, which), [&](double y) {
      return v * drift_eval(drift, std::nullopt, y) + log_density(law, y);
    });
  } catch (const std::exception&) {
    throw_infinite(v);
  }
  if (!std::isfinite(value) || value > kOverflowGuard || value <= 0.0) throw_infinite(v);
  return {std::log(value), 0.0};
}

Estimate LogMgf::operator()(Regime which, double v) const {
  Estimate e = unshifted(which, v);
  e.value += v * profile_.drift.shift;
  return e;
}

Estimate LogMgf::mean(Regime which) const {
  if (profile_.drift.is_markov()) {
    const auto& xs = mc_values(which);
    double s1 = 0.0, s2 = 0.0;
    for (double x : xs) {
      s1 += x;
      s2 += x * x;
    }
    const double n = static_cast<double>(xs.size());
    const double mean = s1 / n;
    const double var = std::max(0.0, (s2 / n - mean * mean) * n / (n - 1.0));
    return {mean + profile_.drift.shift, std::sqrt(var / n)};
  }
  const auto& law = regime_law(profile_, which);
  const DriftFn drift = unshifted_drift(profile_.drift);
  double value = std::numeric_limits<double>::quiet_NaN();
  try {
    value = integrate_signed(breakpoints(profile_, which), [&](double y) {
      return drift_eval(drift, std::nullopt, y) * std::exp(log_density(law, y));
    });
  } catch (const std::exception&) {
  }
  if (!std::isfinite(value)) throw NumericalError("drift mean undefined under the " +
                                                  law_name(law) + " law");
  return {value + profile_.drift.shift, 0.0};
}

double LogMgf::second_derivative(double v, double step) const {
  const double fp = (*this)(Regime::kPre, v + step).value;
  const double f0 = (*this)(Regime::kPre, v).value;
  const double fm = (*this)(Regime::kPre, v - step).value;
  return (fp - 2.0 * f0 + fm) / (step * step);
}

double log_mgf(const MgfProfile& profile, Regime which, double v) {
  return LogMgf(profile)(which, v).value;
}

namespace {

// Bisection for a sign change of fn on [lo, hi] with fn(lo) < 0 < fn(hi).
template <class Fn>
double bisect_root(Fn&& fn, double lo, double hi) {
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-9; };
  const auto r = boost::math::tools::bisect(fn, lo, hi, tol);
  return 0.5 * (r.first + r.second);
}

// First point of the geometric grid start * factor^j (j >= 1, below kSearchMax)
// where fn > 0; returns the bracket (last non-positive point, first positive point).
template <class Fn>
std::pair<double, double> scan_up(Fn&& fn, double start, double factor) {
  double lo = start;
  double v = start;
  while (v < kSearchMax) {
    v = std::min(kSearchMax, v * factor);
    double f = 0.0;
    try {
      f = fn(v);
    } catch (const NumericalError&) {
      throw NumericalError("(A3) root not found");
    }
    if (f > 0.0) return {lo, v};
    lo = v;
  }
  throw NumericalError("(A3) root not found");
}

}  // namespace

std::pair<double, double> find_roots(const LogMgf& mgf) {
  const double m0 = mgf.mean(Regime::kPre).value;
  const double m1 = mgf.mean(Regime::kPost).value;
  if (!(m0 < 0.0 && 0.0 < m1)) {
    std::ostringstream os;
    os << "(A1) violated: need m0 < 0 < m1, got m0 = " << m0 << ", m1 = " << m1;
    throw ValidationError(os.str());
  }
  auto lam = [&](double v) { return mgf(Regime::kPre, v).value; };
  const double start = 1e-6;
  if (!(lam(start) < 0.0)) throw NumericalError("(A3) root not found");
  const auto [a0, b0] = scan_up(lam, start, 1.15);
  const double v0 = bisect_root(lam, a0, b0);
  const double rho = mgf.profile().rho_a;
  auto shifted = [&](double v) { return lam(v) - rho; };
  const auto [a1, b1] = scan_up(shifted, v0, 1.05);
  const double vp = bisect_root(shifted, a1, b1);
  return {v0, vp};
}

std::pair<double, double> find_roots(const MgfProfile& profile) { return find_roots(LogMgf(profile)); }

double rstar(const LogMgf& mgf) {
  const double pi1 = mgf.mean(Regime::kPost).value - mgf.profile().drift.shift;
  auto objective = [&](double v) {
    try {
      return mgf.unshifted(Regime::kPre, v).value - v * pi1;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  // Golden-section search; ties move left so an infinite right part is cut off.
  const double lo_bound = 1e-4;
  double a = lo_bound, b = kSearchMax;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = objective(c), fd = objective(d);
  while (b - a > 1e-8) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = objective(d);
    }
  }
  const double v = 0.5 * (a + b);
  const double lam = objective(v) + v * pi1;
  if (!std::isfinite(lam) || v > kSearchMax - 1e-6) throw NumericalError("r* undefined");
  return (mgf.profile().rho_a - lam) / v;
}

double rstar(const MgfProfile& profile) { return rstar(LogMgf(profile)); }

AsymptoticSummary summarize(const MgfProfile& profile) {
  LogMgf mgf(profile);
  AsymptoticSummary s;
  const auto e0 = mgf.mean(Regime::kPre);
  const auto e1 = mgf.mean(Regime::kPost);
  s.m0 = e0.value;
  s.m1 = e1.value;
  s.m0_se = e0.std_error;
  s.m1_se = e1.std_error;
  std::tie(s.v0, s.v_plus) = find_roots(mgf);
  s.gamma2 = mgf.second_derivative(s.v_plus, 1e-4) / std::pow(s.v_plus, 3);
  s.rstar = rstar(mgf);
  if (profile.drift.is_markov()) {
    // Widen the root tolerance to three standard errors of Lambda_0 near the root.
    const auto at = mgf(Regime::kPre, s.v_plus);
    const double slope =
        (mgf(Regime::kPre, s.v_plus + 1e-4).value - mgf(Regime::kPre, s.v_plus - 1e-4).value) / 2e-4;
    if (slope > 0.0) s.root_tolerance = std::max(s.root_tolerance, 3.0 * at.std_error / slope);
  }
  return s;
}

double approx_cost(const AsymptoticSummary& s, double h, double kappa) {
  if (!(h > 0.0) || !(kappa >= 0.0)) throw ValidationError("approx_cost needs h > 0 and kappa >= 0");
  return h / s.m1 + kappa * std::sqrt(h) * std::sqrt(2.0 * std::numbers::pi * s.gamma2) * std::exp(-h * s.v_plus);
}

ThresholdCost approx_opt(const AsymptoticSummary& s, double kappa) {
  if (!(kappa > 1.0)) throw ValidationError("approx_opt needs kappa > 1");
  const double h = std::log(kappa) / s.v_plus;
  return {h, h / s.m1};
}

ThresholdCost shifted_approx(const AsymptoticSummary& s, double kappa, const Anchor& anchor) {
  const auto at = approx_opt(s, kappa);
  const auto base = approx_opt(s, anchor.kappa);
  return {at.h - base.h + anchor.h, at.cost - base.cost + anchor.cost};
}

}  // namespace qcdq
