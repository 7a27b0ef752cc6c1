#pragma once

// Generative side of the change detection problem: change-time laws,
// observation laws and the path simulator that produces the hidden state
// alongside each observation.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "qcdq/rng.hpp"

namespace qcdq {

// ---- change time -----------------------------------------------------------

/// P{tau = k} = p (1 - p)^k on k = 0, 1, 2, ...
struct Geometric {
  double p = 0.02;
};

/// With probability w a Geometric(p_slow) draw, otherwise Geometric(p_fast).
struct Mixture {
  double w = 0.25;
  double p_slow = 0.02;
  double p_fast = 0.2;
};

using ChangeTimeLaw = std::variant<Geometric, Mixture>;

void validate(const ChangeTimeLaw& law);

std::int64_t sample_change_time(const ChangeTimeLaw& law, Rng& rng);

/// E[tau - k | tau > k]. Throws NumericalError when P{tau > k} = 0.
double mean_residual(const ChangeTimeLaw& law, std::int64_t k);

/// P{tau > k}.
double survival(const ChangeTimeLaw& law, std::int64_t k);

double mean_change_time(const ChangeTimeLaw& law);

/// Exact exponential tail rate -log(1 - p) of P{tau >= n} (slowest component for mixtures).
double tail_rate(const ChangeTimeLaw& law);

/// Geometric parameter used as the nominal rate (slowest component for mixtures).
double nominal_rate(const ChangeTimeLaw& law);

// ---- observations ----------------------------------------------------------

struct IidGaussian {
  double mu = 0.0;
  double sigma = 1.0;
};
struct IidLaplace {
  double mu = 0.0;
  double b = 1.0;
};
struct IidCauchy {
  double x0 = 0.0;
  double gamma = 1.0;
};
/// X_{k+1} = a X_k + W_{k+1}, W ~ N(0, sigma_w^2).
struct Ar1 {
  double a = 0.0;
  double sigma_w = 1.0;
};

using ObservationLaw = std::variant<IidGaussian, IidLaplace, IidCauchy, Ar1>;

void validate(const ObservationLaw& law);

bool is_iid(const ObservationLaw& law);
std::string law_name(const ObservationLaw& law);

/// Marginal log-density of an i.i.d. law.
double log_density(const ObservationLaw& law, double y);

/// One draw from an i.i.d. law.
double sample_iid(const ObservationLaw& law, Rng& rng);

/// Standard deviation of the stationary marginal of an Ar1 law.
double ar1_stationary_sd(const Ar1& law);

// ---- model -----------------------------------------------------------------

struct QcdModel {
  ObservationLaw pre = IidGaussian{0.0, 1.0};
  ObservationLaw post = IidGaussian{0.5, 1.0};
  ChangeTimeLaw change = Geometric{0.02};
  double kappa = 1.0;
};

void validate(const QcdModel& model);

struct HiddenStep {
  std::int64_t k = 0;
  double y = 0.0;
  bool changed = false;
  double mean_residual = 0.0;  ///< 0 once changed
};

/// Lazily generated observation path. The change time is drawn first, then
/// observations in time order, so any prefix of a path is a function of the
/// stream alone.
class PathSimulator {
 public:
  PathSimulator(const QcdModel& model, Rng rng);

  std::int64_t change_time() const { return tau_; }
  const QcdModel& model() const { return model_; }

  HiddenStep next();

 private:
  QcdModel model_;
  Rng rng_;
  std::int64_t tau_ = 0;
  std::int64_t k_ = 0;
  double x_prev_ = 0.0;  // lagged Ar1 value
  bool markov_ = false;
};

std::vector<HiddenStep> simulate_path(const QcdModel& model, std::size_t max_len, Rng& rng);

}  // namespace qcdq
