#include "qcdq/model.hpp"

#include <cmath>
#include <limits>

#include <boost/random/cauchy_distribution.hpp>
#include <boost/random/geometric_distribution.hpp>
#include <boost/random/laplace_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "qcdq/error.hpp"

namespace qcdq {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_probability(double p, const char* what) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ValidationError(std::string(what) + " must lie in (0, 1]");
  }
}

std::int64_t sample_geometric(double p, Rng& rng) {
  if (p >= 1.0) return 0;
  boost::random::geometric_distribution<std::int64_t, double> dist(p);
  return dist(rng);
}

// log P{tau > k} = (k + 1) log(1 - p)
double log_survival_geometric(double p, std::int64_t k) {
  if (p >= 1.0) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(k + 1) * std::log1p(-p);
}

}  // namespace

void validate(const ChangeTimeLaw& law) {
  std::visit(overloaded{
                 [](const Geometric& g) { check_probability(g.p, "geometric p"); },
                 [](const Mixture& m) {
                   if (!(m.w >= 0.0 && m.w <= 1.0)) throw ValidationError("mixture w must lie in [0, 1]");
                   check_probability(m.p_slow, "mixture p_slow");
                   check_probability(m.p_fast, "mixture p_fast");
                 },
             },
             law);
}

std::int64_t sample_change_time(const ChangeTimeLaw& law, Rng& rng) {
  return std::visit(overloaded{
                        [&](const Geometric& g) { return sample_geometric(g.p, rng); },
                        [&](const Mixture& m) {
                          const bool slow = bernoulli(rng, m.w);
                          return sample_geometric(slow ? m.p_slow : m.p_fast, rng);
                        },
                    },
                    law);
}

double survival(const ChangeTimeLaw& law, std::int64_t k) {
  return std::visit(overloaded{
                        [&](const Geometric& g) { return std::exp(log_survival_geometric(g.p, k)); },
                        [&](const Mixture& m) {
                          return m.w * std::exp(log_survival_geometric(m.p_slow, k)) +
                                 (1.0 - m.w) * std::exp(log_survival_geometric(m.p_fast, k));
                        },
                    },
                    law);
}

double mean_residual(const ChangeTimeLaw& law, std::int64_t k) {
  return std::visit(
      overloaded{
          [&](const Geometric& g) -> double {
            if (g.p >= 1.0 && k >= 0) throw NumericalError("conditioning on zero-probability event");
            return 1.0 / g.p;
          },
          [&](const Mixture& m) -> double {
            // Posterior component weights given tau > k, computed in log space.
            const double ls = m.w > 0.0 ? std::log(m.w) + log_survival_geometric(m.p_slow, k)
                                        : -std::numeric_limits<double>::infinity();
            const double lf = m.w < 1.0 ? std::log1p(-m.w) + log_survival_geometric(m.p_fast, k)
                                        : -std::numeric_limits<double>::infinity();
            const double top = std::max(ls, lf);
            if (!std::isfinite(top)) throw NumericalError("conditioning on zero-probability event");
            const double es = std::exp(ls - top);
            const double ef = std::exp(lf - top);
            return (es / m.p_slow + ef / m.p_fast) / (es + ef);
          },
      },
      law);
}

double mean_change_time(const ChangeTimeLaw& law) {
  auto geo_mean = [](double p) { return (1.0 - p) / p; };
  return std::visit(overloaded{
                        [&](const Geometric& g) { return geo_mean(g.p); },
                        [&](const Mixture& m) { return m.w * geo_mean(m.p_slow) + (1.0 - m.w) * geo_mean(m.p_fast); },
                    },
                    law);
}

double nominal_rate(const ChangeTimeLaw& law) {
  return std::visit(overloaded{
                        [](const Geometric& g) { return g.p; },
                        [](const Mixture& m) {
                          if (m.w <= 0.0) return m.p_fast;
                          if (m.w >= 1.0) return m.p_slow;
                          return std::min(m.p_slow, m.p_fast);
                        },
                    },
                    law);
}

double tail_rate(const ChangeTimeLaw& law) { return -std::log1p(-nominal_rate(law)); }

// ---- observation laws --------------------------------------------------------

void validate(const ObservationLaw& law) {
  std::visit(overloaded{
                 [](const IidGaussian& g) {
                   if (!(g.sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
                 },
                 [](const IidLaplace& l) {
                   if (!(l.b > 0.0)) throw ValidationError("laplace b must be positive");
                 },
                 [](const IidCauchy& c) {
                   if (!(c.gamma > 0.0)) throw ValidationError("cauchy gamma must be positive");
                 },
                 [](const Ar1& a) {
                   if (!(a.sigma_w > 0.0)) throw ValidationError("ar1 sigma_w must be positive");
                   if (!(std::abs(a.a) < 1.0)) throw ValidationError("ar1 coefficient must satisfy |a| < 1");
                 },
             },
             law);
}

bool is_iid(const ObservationLaw& law) { return !std::holds_alternative<Ar1>(law); }

std::string law_name(const ObservationLaw& law) {
  return std::visit(overloaded{
                        [](const IidGaussian&) { return std::string("gaussian"); },
                        [](const IidLaplace&) { return std::string("laplace"); },
                        [](const IidCauchy&) { return std::string("cauchy"); },
                        [](const Ar1&) { return std::string("ar1"); },
                    },
                    law);
}

double log_density(const ObservationLaw& law, double y) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  constexpr double kLogPi = 1.14472988584940017414;
  return std::visit(overloaded{
                        [&](const IidGaussian& g) {
                          const double z = (y - g.mu) / g.sigma;
                          return -0.5 * z * z - std::log(g.sigma) - kLogSqrt2Pi;
                        },
                        [&](const IidLaplace& l) { return -std::abs(y - l.mu) / l.b - std::log(2.0 * l.b); },
                        [&](const IidCauchy& c) {
                          const double z = (y - c.x0) / c.gamma;
                          return -kLogPi - std::log(c.gamma) - std::log1p(z * z);
                        },
                        [&](const Ar1&) -> double {
                          throw ValidationError("ar1 law has no i.i.d. marginal density here");
                        },
                    },
                    law);
}

double sample_iid(const ObservationLaw& law, Rng& rng) {
  return std::visit(overloaded{
                        [&](const IidGaussian& g) {
                          boost::random::normal_distribution<double> d(g.mu, g.sigma);
                          return d(rng);
                        },
                        [&](const IidLaplace& l) {
                          boost::random::laplace_distribution<double> d(l.mu, l.b);
                          return d(rng);
                        },
                        [&](const IidCauchy& c) {
                          boost::random::cauchy_distribution<double> d(c.x0, c.gamma);
                          return d(rng);
                        },
                        [&](const Ar1&) -> double { throw ValidationError("ar1 law is not i.i.d."); },
                    },
                    law);
}

double ar1_stationary_sd(const Ar1& law) { return law.sigma_w / std::sqrt(1.0 - law.a * law.a); }

void validate(const QcdModel& model) {
  validate(model.pre);
  validate(model.post);
  validate(model.change);
  if (!(model.kappa > 0.0)) throw ValidationError("kappa must be positive");
  const bool pre_markov = !is_iid(model.pre);
  const bool post_markov = !is_iid(model.post);
  if (pre_markov != post_markov) {
    throw ValidationError("pre and post laws must both be ar1 or both be i.i.d.");
  }
}

// ---- paths -------------------------------------------------------------------

PathSimulator::PathSimulator(const QcdModel& model, Rng rng) : model_(model), rng_(std::move(rng)) {
  tau_ = sample_change_time(model_.change, rng_);
  markov_ = !is_iid(model_.pre);
  if (markov_) {
    // Lag before time 0 drawn from the stationary pre-change marginal.
    const auto& pre = std::get<Ar1>(model_.pre);
    x_prev_ = ar1_stationary_sd(pre) * standard_normal(rng_);
  }
}

HiddenStep PathSimulator::next() {
  HiddenStep step;
  step.k = k_;
  step.changed = k_ >= tau_;
  const ObservationLaw& law = step.changed ? model_.post : model_.pre;
  if (markov_) {
    // Only the dynamics switch; the lagged value carries across the change.
    const auto& ar = std::get<Ar1>(law);
    x_prev_ = ar.a * x_prev_ + ar.sigma_w * standard_normal(rng_);
    step.y = x_prev_;
  } else {
    step.y = sample_iid(law, rng_);
  }
  step.mean_residual = step.changed ? 0.0 : mean_residual(model_.change, k_);
  ++k_;
  return step;
}

std::vector<HiddenStep> simulate_path(const QcdModel& model, std::size_t max_len, Rng& rng) {
  if (max_len < 1) throw ValidationError("max_len must be at least 1");
  PathSimulator sim(model, Rng(rng()));
  std::vector<HiddenStep> out;
  out.reserve(max_len);
  for (std::size_t i = 0; i < max_len; ++i) out.push_back(sim.next());
  return out;
}

}  // namespace qcdq
