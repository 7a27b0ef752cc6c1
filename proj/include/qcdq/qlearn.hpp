#pragma once

// Q-learning for the stopping problem on a surrogate information state, in
// the regenerative setting, with optional Zap matrix gain and averaging.

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "qcdq/basis.hpp"
#include "qcdq/model.hpp"
#include "qcdq/rng.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

struct QFunction {
  RbfBasis basis;
  Eigen::VectorXd theta;  ///< [theta0; theta1], each of length K
};

void validate(const QFunction& qf);

double q_value(const QFunction& qf, const Eigen::Ref<const Eigen::VectorXd>& s, int u);

/// 1 (stop) iff Q(s, 0) >= Q(s, 1).
int greedy(const QFunction& qf, const Eigen::Ref<const Eigen::VectorXd>& s);

// ---- threshold extraction --------------------------------------------------

struct ScanGrid {
  double lo = 0.0;
  double hi = 30.0;
  std::size_t points = 30001;  ///< includes both ends

  double at(std::size_t i) const;
};

struct ThresholdResult {
  bool is_threshold = false;
  double h = 0.0;                ///< first grid point in the stop set (valid iff the stop set is nonempty)
  bool stop_set_empty = false;
  std::vector<double> violations;  ///< grid points where the policy differs from 1{s >= h}
};

/// Scans a one-dimensional stopping rule (returns 1 to stop) over the grid.
ThresholdResult threshold_scan(const std::function<int(double)>& policy, const ScanGrid& grid);

/// threshold_scan of the greedy policy of a one-dimensional Q-function.
ThresholdResult threshold_of(const QFunction& qf, const ScanGrid& grid);

// ---- temporal difference ---------------------------------------------------

struct TdStep {
  HiddenStep hidden;
  Eigen::VectorXd s;
  int u = 0;
  Eigen::VectorXd s_next;  ///< ignored when u = 1 or in_delta
  bool in_delta = false;
};

/// c(Phi, 0) = 1{changed}; c(Phi, 1) = kappa * mean_residual (0 once changed).
double stage_cost(const HiddenStep& hidden, int u, double kappa);

/// D = -Q(s, u) + c(Phi, u) + gamma (1 - u) 1{Phi not in Delta} min_u' Q(s', u').
double td_regen(const QFunction& qf, const TdStep& step, double gamma, double kappa);

// ---- transition sampling ---------------------------------------------------

struct SamplerOptions {
  double eta = 30.0;          ///< regeneration radius on |S|_inf
  double explore_p = 0.5;     ///< P{U = 1}
  bool regen_on_stop = false; ///< also regenerate after U = 1
  std::int64_t episode_cap = 1'000'000;
};

struct SamplerStreams {
  StreamTag path = StreamTag::kTrainPath;
  StreamTag control = StreamTag::kTrainControl;
  std::uint64_t index = 0;
};

/// One sampled decision epoch of the regenerative training chain.
struct Transition {
  HiddenStep hidden;
  Eigen::VectorXd s;
  int u = 0;
  bool in_delta = false;  ///< |s|_inf >= eta: the chain regenerates after this epoch
  bool has_next = false;  ///< s_next is the following state of the same episode
  Eigen::VectorXd s_next;
};

/// Generates the training chain: each episode starts from the reset SIS with
/// a fresh change time; U is i.i.d. Bernoulli(explore_p); an episode ends when
/// |S|_inf >= eta, or after U = 1 when regen_on_stop is set. Episode e uses the
/// observation substream (stream_seed(seed, path, index), path, e); exploration
/// draws come from (seed, control, index).
class TransitionSampler {
 public:
  TransitionSampler(const QcdModel& model, const SisSpec& spec, const SamplerOptions& opts, std::uint64_t seed,
                    SamplerStreams streams = {});

  const Transition& next();
  std::uint64_t episodes_started() const { return episode_; }
  Rng& control_rng() { return control_; }

 private:
  void start_episode();

  QcdModel model_;
  SisSpec spec_;
  SamplerOptions opts_;
  std::uint64_t path_root_;
  StreamTag path_tag_;
  Rng control_;
  std::uint64_t episode_ = 0;
  std::int64_t episode_len_ = 0;
  std::optional<PathSimulator> sim_;
  SisState state_;
  HiddenStep hidden_;
  bool need_start_ = true;
  Transition current_;
};

// ---- training --------------------------------------------------------------

struct ZapConfig {
  bool enabled = true;
  double beta0 = 1.0;
  double beta_rho = 0.85;
  double ridge = 1e-6;
  std::int64_t refresh_every = 1000;  ///< exact re-inversion period of the gain
};

struct TrainConfig {
  std::int64_t n_regens = 200'000;
  double alpha0 = 1.0;
  double rho = 1.0;
  double gamma = 1.0;
  double kappa = 1.0;
  double eta = 30.0;
  double explore_p = 0.5;
  bool regen_on_stop = false;
  double reset_bound = 5e3;
  double theta0_scale = 50.0;  ///< theta_0 and resets uniform in [-scale, scale]
  ZapConfig zap;
  bool averaging = true;
  std::uint64_t seed = 1;
  std::int64_t episode_cap = 1'000'000;
  std::size_t log_capacity = 10'000;
};

void validate(const TrainConfig& cfg);

struct TrainResult {
  Eigen::VectorXd theta_final;
  std::optional<Eigen::VectorXd> theta_pr;
  std::int64_t sample_count = 0;
  std::int64_t regen_count = 0;
  std::int64_t reset_count = 0;
  std::int64_t locality_violations = 0;
  std::int64_t log_stride = 1;
  std::vector<std::pair<std::int64_t, Eigen::VectorXd>> iterate_log;
};

/// alpha_n = min(alpha0, n^{-rho}) for n >= 1.
double step_size(double alpha0, double rho, std::int64_t n);

/// Runs cfg.n_regens episodes of Q-learning from theta_0 ~ U[-scale, scale].
/// With Zap, the increment is premultiplied by G = -(A_hat - ridge I)^{-1},
/// where A_hat tracks psi_n (gamma (1 - u_n) 1{not Delta} psi(s', greedy(s')) - psi_n)^T.
TrainResult train(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis, const TrainConfig& cfg);

/// Same, from a supplied initial parameter.
TrainResult train_from(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis, const TrainConfig& cfg,
                       const Eigen::VectorXd& theta0);

struct ProjectionCheck {
  Eigen::VectorXd theta1_hat;
  Eigen::VectorXd theta1_ls;
  double relative_error = 0.0;
};

/// Least-squares projection of the stopping cost onto the stop-block features,
/// estimated on n_samples epochs of the training chain with U = 1, using a feature
/// map phi (defaults to the RBF values of the basis).
Eigen::VectorXd projected_stop_cost(const QcdModel& model, const SisSpec& spec, const TrainConfig& cfg,
                                    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& phi,
                                    std::size_t n_samples, std::uint64_t seed);

ProjectionCheck projection_check(const QFunction& trained, const QcdModel& model, const SisSpec& spec,
                                 const TrainConfig& cfg, std::size_t n_samples, std::uint64_t seed);

}  // namespace qcdq
