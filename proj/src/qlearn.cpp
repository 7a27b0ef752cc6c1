#include "qcdq/qlearn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "qcdq/error.hpp"

namespace qcdq {

void validate(const QFunction& qf) {
  validate(qf.basis);
  if (qf.theta.size() != qf.basis.feature_dim()) throw ValidationError("theta dimension must equal 2K");
}

double q_value(const QFunction& qf, const Eigen::Ref<const Eigen::VectorXd>& s, int u) {
  const Eigen::Index k = qf.basis.size();
  return qf.theta.segment(u == 0 ? 0 : k, k).dot(rbf_values(qf.basis, s));
}

int greedy(const QFunction& qf, const Eigen::Ref<const Eigen::VectorXd>& s) {
  const Eigen::Index k = qf.basis.size();
  const Eigen::VectorXd r = rbf_values(qf.basis, s);
  return qf.theta.head(k).dot(r) >= qf.theta.tail(k).dot(r) ? 1 : 0;
}

double ScanGrid::at(std::size_t i) const {
  if (points < 2) return lo;
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
}

ThresholdResult threshold_scan(const std::function<int(double)>& policy, const ScanGrid& grid) {
  if (grid.points < 2 || !(grid.hi > grid.lo)) throw ValidationError("scan grid needs hi > lo and >= 2 points");
  std::vector<int> phi(grid.points);
  for (std::size_t i = 0; i < grid.points; ++i) phi[i] = policy(grid.at(i));
  ThresholdResult out;
  const auto first = std::find(phi.begin(), phi.end(), 1);
  if (first == phi.end()) {
    out.stop_set_empty = true;
    out.is_threshold = false;
    return out;
  }
  const std::size_t h_idx = static_cast<std::size_t>(first - phi.begin());
  out.h = grid.at(h_idx);
  for (std::size_t i = h_idx; i < grid.points; ++i)
    if (phi[i] != 1) out.violations.push_back(grid.at(i));
  out.is_threshold = out.violations.empty();
  return out;
}

ThresholdResult threshold_of(const QFunction& qf, const ScanGrid& grid) {
  if (qf.basis.sis_dim() != 1) throw ValidationError("threshold_of needs a one-dimensional SIS");
  Eigen::VectorXd s(1);
  return threshold_scan(
      [&](double x) {
        s(0) = x;
        return greedy(qf, s);
      },
      grid);
}

double stage_cost(const HiddenStep& hidden, int u, double kappa) {
  if (u == 0) return hidden.changed ? 1.0 : 0.0;
  return hidden.changed ? 0.0 : kappa * hidden.mean_residual;
}

double td_regen(const QFunction& qf, const TdStep& step, double gamma, double kappa) {
  double d = -q_value(qf, step.s, step.u) + stage_cost(step.hidden, step.u, kappa);
  if (step.u == 0 && !step.in_delta && gamma != 0.0)
    d += gamma * std::min(q_value(qf, step.s_next, 0), q_value(qf, step.s_next, 1));
  return d;
}

// ---- sampler ---------------------------------------------------------------

TransitionSampler::TransitionSampler(const QcdModel& model, const SisSpec& spec, const SamplerOptions& opts,
                                     std::uint64_t seed, SamplerStreams streams)
    : model_(model),
      spec_(spec),
      opts_(opts),
      path_root_(stream_seed(seed, streams.path, streams.index)),
      path_tag_(streams.path),
      control_(make_stream(seed, streams.control, streams.index)) {
  validate(model_);
  validate(spec_);
  if (!(opts_.eta > 0.0)) throw ValidationError("eta must be positive");
  if (!(opts_.explore_p > 0.0 && opts_.explore_p < 1.0)) throw ValidationError("explore_p must lie in (0, 1)");
}

void TransitionSampler::start_episode() {
  sim_.emplace(model_, make_stream(path_root_, path_tag_, episode_));
  ++episode_;
  episode_len_ = 1;
  state_ = sis_reset(spec_);
  hidden_ = sim_->next();
  sis_step_inplace(spec_, state_, hidden_.y);
  need_start_ = false;
}

const Transition& TransitionSampler::next() {
  if (need_start_) start_episode();
  current_.hidden = hidden_;
  current_.s = state_.s;
  current_.u = bernoulli(control_, opts_.explore_p) ? 1 : 0;
  current_.in_delta = state_.s.cwiseAbs().maxCoeff() >= opts_.eta;
  const bool ends = current_.in_delta || (opts_.regen_on_stop && current_.u == 1);
  if (ends) {
    current_.has_next = false;
    need_start_ = true;
    return current_;
  }
  if (++episode_len_ > opts_.episode_cap) {
    std::ostringstream os;
    os << "episode exceeded the step cap of " << opts_.episode_cap;
    throw NumericalError(os.str());
  }
  hidden_ = sim_->next();
  sis_step_inplace(spec_, state_, hidden_.y);
  current_.has_next = true;
  current_.s_next = state_.s;
  return current_;
}

// ---- training --------------------------------------------------------------

void validate(const TrainConfig& cfg) {
  if (cfg.n_regens < 0) throw ValidationError("train.n_regens must be nonnegative");
  if (!(cfg.alpha0 > 0.0)) throw ValidationError("train.alpha0 must be positive");
  if (!(cfg.rho > 0.5 && cfg.rho <= 1.0)) throw ValidationError("train.rho must lie in (0.5, 1]");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0) && cfg.gamma != 0.0)
    throw ValidationError("train.gamma must lie in [0, 1]");
  if (!(cfg.kappa > 0.0)) throw ValidationError("train.kappa must be positive");
  if (!(cfg.eta > 0.0)) throw ValidationError("train.eta must be positive");
  if (!(cfg.explore_p > 0.0 && cfg.explore_p < 1.0)) throw ValidationError("train.explore_p must lie in (0, 1)");
  if (!(cfg.reset_bound > 0.0)) throw ValidationError("train.reset_bound must be positive");
  if (!(cfg.theta0_scale >= 0.0)) throw ValidationError("train.theta0_scale must be nonnegative");
  if (!(cfg.zap.ridge > 0.0)) throw ValidationError("train.zap.ridge must be positive");
  if (!(cfg.zap.beta0 > 0.0 && cfg.zap.beta0 <= 1.0)) throw ValidationError("train.zap.beta0 must lie in (0, 1]");
  if (!(cfg.zap.beta_rho > 0.0 && cfg.zap.beta_rho <= 1.0))
    throw ValidationError("train.zap.beta_rho must lie in (0, 1]");
  if (cfg.zap.refresh_every < 1) throw ValidationError("train.zap.refresh_every must be >= 1");
  if (cfg.episode_cap < 1) throw ValidationError("train.episode_cap must be >= 1");
  if (cfg.log_capacity < 2) throw ValidationError("train.log_capacity must be >= 2");
}

double step_size(double alpha0, double rho, std::int64_t n) {
  return std::min(alpha0, std::pow(static_cast<double>(n), -rho));
}

namespace {

Eigen::VectorXd uniform_theta(Eigen::Index d, double scale, Rng& rng) {
  Eigen::VectorXd t(d);
  for (Eigen::Index i = 0; i < d; ++i) t(i) = scale * (2.0 * uniform01(rng) - 1.0);
  return t;
}

// Tracks A_hat and the inverse of (A_hat - ridge I). Rank-one averaging
// updates are applied to the inverse by Sherman-Morrison; the inverse is
// recomputed exactly every refresh_every steps and whenever the update is
// ill-conditioned.
class ZapGain {
 public:
  ZapGain(Eigen::Index d, const ZapConfig& cfg)
      : cfg_(cfg), a_hat_(-Eigen::MatrixXd::Identity(d, d)), inv_(Eigen::MatrixXd::Identity(d, d) / -(1.0 + cfg.ridge)) {}

  void update(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double beta) {
    a_hat_ *= (1.0 - beta);
    a_hat_.noalias() += beta * a * b.transpose();
    ++since_refresh_;
    if (beta >= 1.0 - 1e-12 || since_refresh_ >= cfg_.refresh_every) {
      refresh();
      return;
    }
    const double c = beta / (1.0 - beta);
    const Eigen::VectorXd ia = inv_ * a;
    const Eigen::RowVectorXd bi = b.transpose() * inv_;
    const double denom = 1.0 + c * b.dot(ia);
    if (!(std::abs(denom) > 1e-8)) {
      refresh();
      return;
    }
    inv_.noalias() -= (c / denom) * ia * bi;
    inv_ /= (1.0 - beta);
  }

  /// G v = -(A_hat - ridge I)^{-1} v
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return -(inv_ * v); }

 private:
  void refresh() {
    since_refresh_ = 0;
    const Eigen::Index d = a_hat_.rows();
    Eigen::MatrixXd m = a_hat_ - cfg_.ridge * Eigen::MatrixXd::Identity(d, d);
    inv_ = m.partialPivLu().inverse();
  }

  ZapConfig cfg_;
  Eigen::MatrixXd a_hat_;
  Eigen::MatrixXd inv_;
  std::int64_t since_refresh_ = 0;
};

}  // namespace

TrainResult train(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis, const TrainConfig& cfg) {
  validate(basis);
  Rng init = make_stream(cfg.seed, StreamTag::kTrainControl, 1);
  return train_from(model, spec, basis, cfg, uniform_theta(basis.feature_dim(), cfg.theta0_scale, init));
}

TrainResult train_from(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis, const TrainConfig& cfg,
                       const Eigen::VectorXd& theta0) {
  validate(cfg);
  validate(basis);
  validate(spec);
  if (basis.sis_dim() != spec.dim()) throw ValidationError("SIS dimension does not match basis");
  const Eigen::Index k = basis.size();
  const Eigen::Index d = 2 * k;
  if (theta0.size() != d) throw ValidationError("theta0 dimension must equal 2K");

  QcdModel m = model;
  m.kappa = cfg.kappa;
  TrainResult res;
  res.theta_final = theta0;
  if (cfg.averaging) res.theta_pr = theta0;
  if (cfg.n_regens == 0) return res;

  SamplerOptions sopts{cfg.eta, cfg.explore_p, cfg.regen_on_stop, cfg.episode_cap};
  TransitionSampler sampler(m, spec, sopts, cfg.seed);
  Rng reset_rng = make_stream(cfg.seed, StreamTag::kTrainControl, 2);
  std::optional<ZapGain> zap;
  if (cfg.zap.enabled) zap.emplace(d, cfg.zap);

  Eigen::VectorXd& theta = res.theta_final;
  Eigen::VectorXd avg = theta;
  std::int64_t avg_count = 0;
  Eigen::VectorXd zeta(d), jac_b(d), r_s(k), r_next(k);
  bool r_cached = false;
  std::int64_t stride = 1;
  std::int64_t n = 0;

  while (true) {
    if (sampler.episodes_started() >= static_cast<std::uint64_t>(cfg.n_regens) && !r_cached) {
      // All requested episodes have completed.
      break;
    }
    const Transition& tr = sampler.next();
    ++n;
    if (r_cached) {
      r_s = r_next;
    } else {
      r_s = rbf_values(basis, tr.s);
    }
    const int u = tr.u;
    const double q_su = theta.segment(u == 0 ? 0 : k, k).dot(r_s);
    double d_td = -q_su + stage_cost(tr.hidden, u, cfg.kappa);
    const bool cont = u == 0 && !tr.in_delta && cfg.gamma != 0.0;
    if (tr.has_next) {
      r_next = rbf_values(basis, tr.s_next);
      r_cached = true;
    } else {
      r_cached = false;
    }
    int u_next = 1;
    if (cont) {
      const double q0 = theta.head(k).dot(r_next);
      const double q1 = theta.tail(k).dot(r_next);
      u_next = q0 >= q1 ? 1 : 0;
      d_td += cfg.gamma * std::min(q0, q1);
    }

    zeta.setZero();
    zeta.segment(u == 0 ? 0 : k, k) = r_s;
    if (zeta.segment(u == 0 ? k : 0, k).any()) ++res.locality_violations;

    const double alpha = step_size(cfg.alpha0, cfg.rho, n);
    if (zap) {
      jac_b = -zeta;
      if (cont) jac_b.segment(u_next == 0 ? 0 : k, k) += cfg.gamma * r_next;
      const double beta = std::min(cfg.zap.beta0, std::pow(static_cast<double>(n), -cfg.zap.beta_rho));
      zap->update(zeta, jac_b, beta);
      theta.noalias() += (alpha * d_td) * zap->apply(zeta);
    } else {
      theta.noalias() += (alpha * d_td) * zeta;
    }

    if (!theta.allFinite()) {
      std::ostringstream os;
      os << "numerical blow-up at iterate " << n;
      throw NumericalError(os.str());
    }
    if (theta.cwiseAbs().maxCoeff() > cfg.reset_bound) {
      theta = uniform_theta(d, cfg.theta0_scale, reset_rng);
      ++res.reset_count;
      avg = theta;
      avg_count = 0;
    }
    if (cfg.averaging) {
      ++avg_count;
      avg += (theta - avg) / static_cast<double>(avg_count);
    }
    if (n % stride == 0) {
      res.iterate_log.emplace_back(n, theta);
      if (res.iterate_log.size() >= 2 * cfg.log_capacity) {
        // Keep every other entry and double the stride.
        std::vector<std::pair<std::int64_t, Eigen::VectorXd>> kept;
        kept.reserve(cfg.log_capacity);
        for (auto& e : res.iterate_log)
          if (e.first % (2 * stride) == 0) kept.push_back(std::move(e));
        res.iterate_log = std::move(kept);
        stride *= 2;
      }
    }
    if (!tr.has_next) ++res.regen_count;
  }
  res.sample_count = n;
  res.log_stride = stride;
  if (cfg.averaging) res.theta_pr = avg;
  return res;
}

Eigen::VectorXd projected_stop_cost(const QcdModel& model, const SisSpec& spec, const TrainConfig& cfg,
                                    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& phi,
                                    std::size_t n_samples, std::uint64_t seed) {
  QcdModel m = model;
  m.kappa = cfg.kappa;
  SamplerOptions sopts{cfg.eta, cfg.explore_p, cfg.regen_on_stop, cfg.episode_cap};
  TransitionSampler sampler(m, spec, sopts, seed, {StreamTag::kProjection, StreamTag::kAuxiliary, 0});
  Eigen::MatrixXd r;
  Eigen::VectorXd b;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Transition& tr = sampler.next();
    if (tr.u != 1) continue;
    const Eigen::VectorXd f = phi(tr.s);
    if (r.size() == 0) {
      r = Eigen::MatrixXd::Zero(f.size(), f.size());
      b = Eigen::VectorXd::Zero(f.size());
    }
    r.selfadjointView<Eigen::Lower>().rankUpdate(f);
    b += f * stage_cost(tr.hidden, 1, cfg.kappa);
  }
  if (r.size() == 0) throw NumericalError("rank-deficient feature covariance: no stop samples");
  r = r.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(eig.eigenvalues().minCoeff() > 1e-12 * top)) throw NumericalError("rank-deficient feature covariance");
  return r.ldlt().solve(b);
}

ProjectionCheck projection_check(const QFunction& trained, const QcdModel& model, const SisSpec& spec,
                                 const TrainConfig& cfg, std::size_t n_samples, std::uint64_t seed) {
  validate(trained);
  const Eigen::Index k = trained.basis.size();
  ProjectionCheck out;
  out.theta1_hat = trained.theta.tail(k);
  out.theta1_ls = projected_stop_cost(
      model, spec, cfg, [&](const Eigen::VectorXd& s) { return rbf_values(trained.basis, s); }, n_samples, seed);
  out.relative_error = (out.theta1_hat - out.theta1_ls).norm() / out.theta1_ls.norm();
  return out;
}

}  // namespace qcdq
