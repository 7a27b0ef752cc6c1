#include "qcdq/meanflow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "qcdq/error.hpp"

namespace qcdq {

namespace {

// One transition of the sampled chain in feature coordinates.
struct FlowSample {
  Eigen::VectorXd zeta;
  double cost = 0.0;
  bool cont = false;
  Eigen::VectorXd next0, next1;  // psi(s', 0), psi(s', 1)
};

// Produces the stationary-regime samples of an estimator, in order.
class SampleStream {
 public:
  explicit SampleStream(const FlowEstimator& est) : est_(est) {
    if (auto* q = std::get_if<QcdFlowSource>(&est.source)) {
      QcdModel m = q->model;
      m.kappa = q->kappa;
      SamplerOptions opts{q->eta, est.explore_p, q->regen_on_stop, 1'000'000};
      sampler_.emplace(m, q->spec, opts, est.seed,
                       SamplerStreams{StreamTag::kMeanFlow, StreamTag::kAuxiliary, 0});
      const auto burn = static_cast<std::uint64_t>(q->burn_in_regens);
      // Discard every transition of the first burn_in episodes.
      while (burn > 0) {
        const Transition& tr = sampler_->next();
        if (!tr.has_next && sampler_->episodes_started() >= burn) break;
      }
      k_ = q->basis.size();
    } else {
      rng_ = make_stream(est.seed, StreamTag::kMeanFlow, 0);
      s_ = bernoulli(rng_, 0.5) ? 1.0 : -1.0;  // stationary start
    }
  }

  void next(FlowSample& out) {
    if (auto* q = std::get_if<QcdFlowSource>(&est_.source)) {
      const Transition& tr = sampler_->next();
      const Eigen::VectorXd r = rbf_values(q->basis, tr.s);
      out.zeta.setZero(2 * k_);
      out.zeta.segment(tr.u == 0 ? 0 : k_, k_) = r;
      out.cost = stage_cost(tr.hidden, tr.u, q->kappa);
      out.cont = tr.u == 0 && !tr.in_delta && est_.gamma != 0.0;
      if (out.cont) {
        const Eigen::VectorXd rn = rbf_values(q->basis, tr.s_next);
        out.next0.setZero(2 * k_);
        out.next1.setZero(2 * k_);
        out.next0.head(k_) = rn;
        out.next1.tail(k_) = rn;
      }
      return;
    }
    const auto& ts = std::get<TwoStateSource>(est_.source);
    const int u = bernoulli(rng_, est_.explore_p) ? 1 : 0;
    const double s_next = bernoulli(rng_, ts.delta) ? -s_ : s_;
    out.zeta.resize(1);
    out.zeta(0) = u == 0 ? s_ : ts.xi * s_;
    out.cost = 0.0;
    out.cont = u == 0 && est_.gamma != 0.0;
    out.next0.resize(1);
    out.next1.resize(1);
    out.next0(0) = s_next;
    out.next1(0) = ts.xi * s_next;
    s_ = s_next;
  }

 private:
  const FlowEstimator& est_;
  std::optional<TransitionSampler> sampler_;
  Eigen::Index k_ = 0;
  Rng rng_;
  double s_ = 1.0;
};

// Calls fn(sample, batch) for every sample, with batch in [0, n_batches).
template <class Fn>
void for_each_sample(const FlowEstimator& est, Fn&& fn) {
  SampleStream stream(est);
  FlowSample smp;
  for (std::size_t n = 0; n < est.n_samples; ++n) {
    stream.next(smp);
    fn(smp, n * est.n_batches / est.n_samples);
  }
}

double td_of(const FlowSample& smp, const Eigen::VectorXd& theta, double gamma) {
  double d = -theta.dot(smp.zeta) + smp.cost;
  if (smp.cont) d += gamma * std::min(theta.dot(smp.next0), theta.dot(smp.next1));
  return d;
}

// Mean and standard error from per-batch sums and counts.
template <class M>
void batch_stats(const std::vector<M>& sums, const std::vector<double>& counts, M& mean, M& se) {
  const std::size_t b = sums.size();
  double total = 0.0;
  mean = sums[0] * 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    mean += sums[i];
    total += counts[i];
  }
  mean /= total;
  M var = mean * 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const M bm = sums[i] / counts[i];
    var += ((bm - mean).array() * (bm - mean).array()).matrix();
  }
  const double db = static_cast<double>(b);
  se = (var / (db - 1.0) / db).cwiseSqrt();
}

}  // namespace

Eigen::Index FlowEstimator::dim() const {
  if (auto* q = std::get_if<QcdFlowSource>(&source)) return q->basis.feature_dim();
  return 1;
}

void validate(const FlowEstimator& est) {
  if (est.n_samples < 1000) throw ValidationError("flow estimator needs n_samples >= 1000");
  if (est.n_batches < 2 || est.n_batches > est.n_samples) throw ValidationError("flow estimator needs 2 <= n_batches <= n_samples");
  if (!(est.explore_p > 0.0 && est.explore_p < 1.0)) throw ValidationError("explore_p must lie in (0, 1)");
  if (!(est.gamma >= 0.0 && est.gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
  if (auto* q = std::get_if<QcdFlowSource>(&est.source)) {
    validate(q->model);
    validate(q->spec);
    validate(q->basis);
    if (q->basis.sis_dim() != q->spec.dim()) throw ValidationError("SIS dimension does not match basis");
    if (!(q->eta > 0.0)) throw ValidationError("eta must be positive");
    if (q->burn_in_regens < 0) throw ValidationError("burn_in_regens must be nonnegative");
  } else {
    const auto& t = std::get<TwoStateSource>(est.source);
    if (!(t.delta > 0.0 && t.delta < 1.0)) throw ValidationError("switch probability must lie in (0, 1)");
  }
}

FlowEstimate estimate_barf(const FlowEstimator& est, const Eigen::VectorXd& theta) {
  validate(est);
  const Eigen::Index d = est.dim();
  if (theta.size() != d) throw ValidationError("theta dimension does not match the estimator");
  std::vector<Eigen::VectorXd> sums(est.n_batches, Eigen::VectorXd::Zero(d));
  std::vector<double> counts(est.n_batches, 0.0);
  for_each_sample(est, [&](const FlowSample& smp, std::size_t b) {
    sums[b] += td_of(smp, theta, est.gamma) * smp.zeta;
    counts[b] += 1.0;
  });
  FlowEstimate out;
  batch_stats(sums, counts, out.value, out.std_error);
  return out;
}

InnerProduct estimate_theta_dot_barf(const FlowEstimator& est, const Eigen::VectorXd& theta) {
  validate(est);
  if (theta.size() != est.dim()) throw ValidationError("theta dimension does not match the estimator");
  std::vector<Eigen::VectorXd> sums(est.n_batches, Eigen::VectorXd::Zero(1));
  std::vector<double> counts(est.n_batches, 0.0);
  for_each_sample(est, [&](const FlowSample& smp, std::size_t b) {
    sums[b](0) += td_of(smp, theta, est.gamma) * theta.dot(smp.zeta);
    counts[b] += 1.0;
  });
  Eigen::VectorXd mean, se;
  batch_stats(sums, counts, mean, se);
  return {mean(0), se(0)};
}

LinearParts estimate_linear_parts(const FlowEstimator& est) {
  validate(est);
  const Eigen::Index d = est.dim();
  std::vector<Eigen::MatrixXd> rs(est.n_batches, Eigen::MatrixXd::Zero(d, d));
  std::vector<Eigen::MatrixXd> rm(est.n_batches, Eigen::MatrixXd::Zero(d, d));
  std::vector<Eigen::VectorXd> bs(est.n_batches, Eigen::VectorXd::Zero(d));
  std::vector<double> counts(est.n_batches, 0.0);
  for_each_sample(est, [&](const FlowSample& smp, std::size_t b) {
    rs[b].noalias() += smp.zeta * smp.zeta.transpose();
    const Eigen::VectorXd neg = smp.zeta.cwiseMin(0.0);
    rm[b].noalias() += neg * neg.transpose();
    bs[b] += smp.cost * smp.zeta;
    counts[b] += 1.0;
  });
  LinearParts out;
  batch_stats(rs, counts, out.r, out.r_se);
  batch_stats(bs, counts, out.b, out.b_se);
  Eigen::MatrixXd rm_se;
  batch_stats(rm, counts, out.r_minus, rm_se);
  if (std::holds_alternative<QcdFlowSource>(est.source)) {
    const Eigen::Index k = d / 2;
    out.off_block_max = out.r.topRightCorner(k, k).cwiseAbs().maxCoeff();
    out.off_block_max_se = out.r_se.topRightCorner(k, k).maxCoeff();
  }
  return out;
}

FlowTrajectory integrate_flow(const FlowEstimator& est, const Eigen::VectorXd& theta0, double dt, double t_end,
                              const std::optional<Eigen::VectorXd>& theta_ref) {
  if (!(dt > 0.0 && dt <= 0.1)) throw ValidationError("integrate_flow needs 0 < dt <= 0.1");
  if (!(t_end >= 0.0)) throw ValidationError("integrate_flow needs t_end >= 0");
  constexpr double kGuard = 1e8;
  FlowTrajectory tr;
  Eigen::VectorXd theta = theta0;
  double t = 0.0;
  auto record = [&] {
    tr.t.push_back(t);
    tr.theta.push_back(theta);
    tr.norm.push_back(theta.norm());
    if (theta_ref) tr.dist_ref.push_back((theta - *theta_ref).norm());
  };
  record();
  const auto steps = static_cast<std::int64_t>(std::ceil(t_end / dt - 1e-9));
  for (std::int64_t i = 0; i < steps; ++i) {
    const double h = std::min(dt, t_end - t);
    theta += h * estimate_barf(est, theta).value;
    t += h;
    if (!theta.allFinite() || theta.norm() >= kGuard) {
      tr.diverged = true;
      record();
      break;
    }
    record();
  }
  return tr;
}

FlowEstimator counterexample_instance(double xi, std::size_t n_samples, std::uint64_t seed) {
  if (!(xi > 1.0)) throw ValidationError("counterexample needs xi > 1");
  FlowEstimator est;
  est.source = TwoStateSource{xi, 1.0 / (xi * xi)};
  est.explore_p = 1.0 / (xi * xi * xi);
  est.gamma = 0.99;
  est.n_samples = n_samples;
  est.seed = seed;
  return est;
}

double counterexample_slope(const FlowEstimator& est) {
  const auto& t = std::get<TwoStateSource>(est.source);
  const double p1 = est.explore_p;
  return -p1 * t.xi * t.xi + (1.0 - p1) * (-1.0 + est.gamma * (1.0 - 2.0 * t.delta) * (1.0 + t.xi) / 2.0);
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& p) {
  const Eigen::Index n = p.rows();
  Eigen::MatrixXd a = p.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  return a.fullPivLu().solve(rhs);
}

void validate(FiniteInstance& inst) {
  const Eigen::Index n = inst.p.rows();
  if (n < 1 || n > 50 || inst.p.cols() != n) throw ValidationError("finite instance needs a square P with 1..50 states");
  if ((inst.p.array() < 0.0).any()) throw ValidationError("P has negative entries");
  if (((inst.p.rowwise().sum().array() - 1.0).abs() > 1e-12).any()) throw ValidationError("P rows must sum to 1");
  if (inst.pi.size() == 0) inst.pi = stationary_distribution(inst.p);
  if (inst.pi.size() != n) throw ValidationError("pi has the wrong length");
  if (((inst.pi.transpose() * inst.p - inst.pi.transpose()).array().abs() > 1e-10).any())
    throw ValidationError("pi is not stationary for P");
  if (inst.psi.rows() != n || inst.psi.cols() < 1) throw ValidationError("Psi must have one row per state");
  if (!inst.delta.empty() && static_cast<Eigen::Index>(inst.delta.size()) != n)
    throw ValidationError("Delta membership must have one entry per state");
}

ContractionReport contraction_check(FiniteInstance inst) {
  validate(inst);
  const Eigen::Index n = inst.p.rows();
  const Eigen::Index d = inst.psi.cols();
  const Eigen::MatrixXd dpi = inst.pi.asDiagonal();
  Eigen::VectorXd in_delta = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(inst.delta.size()); ++i) in_delta(i) = inst.delta[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

  const Eigen::MatrixXd r = inst.psi.transpose() * dpi * inst.psi;
  const Eigen::MatrixXd ppsi = inst.p * inst.psi;  // psi_{k+1|k}
  ContractionReport rep;
  rep.d = d;
  rep.sigma = r - ppsi.transpose() * dpi * ppsi;
  rep.m_delta = ppsi.transpose() * (inst.pi.array() * in_delta.array()).matrix().asDiagonal() * ppsi;

  auto rank_of = [](const Eigen::MatrixXd& m, Eigen::MatrixXd* null_space) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    const double tol = 1e-10 * std::max(top, 1e-300);
    Eigen::Index rank = 0;
    std::vector<Eigen::Index> null_idx;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (std::abs(es.eigenvalues()(i)) > tol) ++rank;
      else null_idx.push_back(i);
    }
    if (null_space) {
      null_space->resize(m.rows(), static_cast<Eigen::Index>(null_idx.size()));
      for (std::size_t j = 0; j < null_idx.size(); ++j)
        null_space->col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(null_idx[j]);
    }
    return top == 0.0 ? Eigen::Index{0} : rank;
  };

  Eigen::MatrixXd null_space;
  rep.rank_r = rank_of(r, &null_space);
  if (rep.rank_r < d) {
    std::ostringstream os;
    os << "singular feature covariance R (rank " << rep.rank_r << " of " << d << "); null space basis:";
    for (Eigen::Index j = 0; j < null_space.cols(); ++j) {
      os << " [";
      for (Eigen::Index i = 0; i < d; ++i) os << (i ? ", " : "") << null_space(i, j);
      os << "]";
    }
    throw NumericalError(os.str());
  }
  rep.rank_sigma_m = rank_of(rep.sigma + rep.m_delta, nullptr);

  const Eigen::MatrixXd a = r - rep.sigma - rep.m_delta;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(0.5 * (a + a.transpose()), r);
  rep.rho_hat = ges.eigenvalues().maxCoeff();
  return rep;
}

}  // namespace qcdq
