#include "qcdq/sis.hpp"

#include <cmath>

#include "qcdq/error.hpp"

namespace qcdq {
namespace {

bool same_family(const ObservationLaw& a, const ObservationLaw& b) { return a.index() == b.index(); }

// log f1(y) - log f0(y), using the simplified closed form of each family.
double iid_llr(const IidLlr& d, double y) {
  const auto& f0 = d.breve0;
  const auto& f1 = d.breve1;
  if (same_family(f0, f1)) {
    if (const auto* g0 = std::get_if<IidGaussian>(&f0)) {
      const auto& g1 = std::get<IidGaussian>(f1);
      if (g0->sigma == g1.sigma) {
        // Equal variances: linear, (mu1 - mu0)/sigma^2 * (y - (mu0 + mu1)/2).
        return (g1.mu - g0->mu) / (g0->sigma * g0->sigma) * (y - 0.5 * (g0->mu + g1.mu));
      }
      // log(s0/s1) + (y-mu0)^2/(2 s0^2) - (y-mu1)^2/(2 s1^2)
      const double z0 = (y - g0->mu) / g0->sigma;
      const double z1 = (y - g1.mu) / g1.sigma;
      return std::log(g0->sigma / g1.sigma) + 0.5 * (z0 * z0 - z1 * z1);
    }
    if (const auto* l0 = std::get_if<IidLaplace>(&f0)) {
      // Piecewise linear: log(b0/b1) + |y-mu0|/b0 - |y-mu1|/b1.
      const auto& l1 = std::get<IidLaplace>(f1);
      return std::log(l0->b / l1.b) + std::abs(y - l0->mu) / l0->b - std::abs(y - l1.mu) / l1.b;
    }
    if (const auto* c0 = std::get_if<IidCauchy>(&f0)) {
      // Log of a rational function: log(g1/g0) + log((g0^2 + (y-x0)^2) / (g1^2 + (y-x1)^2)).
      const auto& c1 = std::get<IidCauchy>(f1);
      const double u0 = y - c0->x0;
      const double u1 = y - c1.x0;
      return std::log(c1.gamma / c0->gamma) +
             std::log((c0->gamma * c0->gamma + u0 * u0) / (c1.gamma * c1.gamma + u1 * u1));
    }
  }
  return log_density(f1, y) - log_density(f0, y);
}

double markov_llr(const MarkovLlr& d, double x, double z) {
  const double e0 = z - d.a0 * x;
  const double e1 = z - d.a1 * x;
  if (const auto* g = std::get_if<IidGaussian>(&d.innovation)) {
    // (e0^2 - e1^2) / (2 s^2); for s = 1 this is ((a0^2 - a1^2)/2) x^2 - (a0 - a1) x z.
    return (e0 * e0 - e1 * e1) / (2.0 * g->sigma * g->sigma);
  }
  if (const auto* l = std::get_if<IidLaplace>(&d.innovation)) {
    return (std::abs(e0) - std::abs(e1)) / l->b;
  }
  if (const auto* c = std::get_if<IidCauchy>(&d.innovation)) {
    const double g2 = c->gamma * c->gamma;
    return std::log((g2 + e0 * e0) / (g2 + e1 * e1));
  }
  throw ValidationError("markov drift innovation must be gaussian, laplace or cauchy");
}

}  // namespace

void validate(const DriftFn& drift) {
  if (!std::isfinite(drift.shift)) throw ValidationError("drift shift must be finite");
  if (const auto* iid = std::get_if<IidLlr>(&drift.llr)) {
    validate(iid->breve0);
    validate(iid->breve1);
    if (!is_iid(iid->breve0) || !is_iid(iid->breve1)) {
      throw ValidationError("iid_llr requires density-valued i.i.d. laws");
    }
  } else {
    const auto& m = std::get<MarkovLlr>(drift.llr);
    validate(m.innovation);
    if (!is_iid(m.innovation)) throw ValidationError("markov_llr innovation must be an i.i.d. density");
    if (!(std::abs(m.a0) < 1.0 && std::abs(m.a1) < 1.0)) {
      throw ValidationError("markov_llr coefficients must satisfy |a| < 1");
    }
  }
}

bool SisSpec::needs_lag() const {
  for (const auto& c : components) {
    if (c.drift.is_markov()) return true;
  }
  return false;
}

void validate(const SisSpec& spec) {
  if (spec.components.empty()) throw ValidationError("sis spec must have at least one component");
  for (const auto& c : spec.components) validate(c.drift);
}

double drift_eval(const DriftFn& drift, std::optional<double> y_prev, double y) {
  if (!std::isfinite(y)) throw NumericalError("drift undefined at observation");
  double value;
  if (const auto* iid = std::get_if<IidLlr>(&drift.llr)) {
    value = iid_llr(*iid, y);
  } else {
    if (!y_prev) throw ValidationError("markov drift requires the previous observation");
    value = markov_llr(std::get<MarkovLlr>(drift.llr), *y_prev, y);
  }
  if (!std::isfinite(value)) throw NumericalError("drift undefined at observation");
  return value + drift.shift;
}

SisState sis_reset(const SisSpec& spec) {
  SisState st;
  st.s = Eigen::VectorXd::Zero(spec.dim());
  return st;
}

void sis_step_inplace(const SisSpec& spec, SisState& state, double y) {
  for (Eigen::Index i = 0; i < spec.dim(); ++i) {
    const auto& comp = spec.components[static_cast<std::size_t>(i)];
    const double f = (comp.drift.is_markov() && !state.y_prev) ? 0.0 : drift_eval(comp.drift, state.y_prev, y);
    double& s = state.s[i];
    if (comp.kind == StatKind::kCusum) {
      s = std::max(0.0, s + f);
    } else {
      s = std::exp(f) * (s + 1.0);
    }
  }
  if (spec.needs_lag()) state.y_prev = y;
}

SisState sis_step(const SisSpec& spec, const SisState& state, double y) {
  if (state.s.size() != spec.dim()) throw ValidationError("sis state dimension does not match spec");
  SisState next = state;
  sis_step_inplace(spec, next, y);
  return next;
}

}  // namespace qcdq
