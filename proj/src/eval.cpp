#include "qcdq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "qcdq/error.hpp"
#include "qcdq/parallel.hpp"

namespace qcdq {

namespace {

struct Moments {
  double s1 = 0.0;
  double s2 = 0.0;
  void add(double x) {
    s1 += x;
    s2 += x * x;
  }
};

double mean_of(double s1, std::size_t n) { return s1 / static_cast<double>(n); }

double se_of(double s1, double s2, std::size_t n) {
  if (n < 2) return 0.0;
  const double nn = static_cast<double>(n);
  const double m = s1 / nn;
  const double var = std::max(0.0, (s2 - nn * m * m) / (nn - 1.0));
  return std::sqrt(var / nn);
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("threshold grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ValidationError("threshold grid must be strictly increasing");
}

// Shared engine for one-dimensional sweeps. make_stat() returns a callable
// mapping the next observation (as a HiddenStep) to the scalar statistic.
template <class MakeStat>
ThresholdTable sweep_core(const QcdModel& model, const std::vector<double>& grid, const McOptions& opts,
                          MakeStat&& make_stat) {
  check_grid(grid);
  const std::size_t g = grid.size();
  const BlockPlan plan{opts.n_paths};
  struct Partial {
    std::vector<Moments> mde, mdd;
    std::size_t capped = 0;
  };
  std::vector<Partial> parts(plan.count());
  for_each_block(plan, opts.threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Partial& part = parts[b];
    part.mde.assign(g, {});
    part.mdd.assign(g, {});
    std::vector<std::int64_t> cross(g);
    for (std::size_t i = begin; i < end; ++i) {
      PathSimulator sim(model, make_stream(opts.seed, StreamTag::kEvalPath, i));
      auto stat = make_stat();
      std::size_t j = 0;
      std::int64_t k = 0;
      for (; k < opts.step_cap && j < g; ++k) {
        const double s = stat(sim.next());
        while (j < g && s >= grid[j]) cross[j++] = k;
      }
      if (j < g) {
        ++part.capped;
        for (; j < g; ++j) cross[j] = opts.step_cap;
      }
      const std::int64_t tau = sim.change_time();
      for (std::size_t t = 0; t < g; ++t) {
        part.mde[t].add(static_cast<double>(std::max<std::int64_t>(0, tau - cross[t])));
        part.mdd[t].add(static_cast<double>(std::max<std::int64_t>(0, cross[t] - tau)));
      }
    }
  });
  ThresholdTable table;
  table.grid = grid;
  table.n_paths = opts.n_paths;
  table.seed = opts.seed;
  std::vector<Moments> mde(g), mdd(g);
  for (const auto& part : parts) {
    for (std::size_t t = 0; t < g; ++t) {
      mde[t].s1 += part.mde[t].s1;
      mde[t].s2 += part.mde[t].s2;
      mdd[t].s1 += part.mdd[t].s1;
      mdd[t].s2 += part.mdd[t].s2;
    }
    table.capped_paths += part.capped;
  }
  for (std::size_t t = 0; t < g; ++t) {
    table.mde.push_back(mean_of(mde[t].s1, opts.n_paths));
    table.mdd.push_back(mean_of(mdd[t].s1, opts.n_paths));
    table.se_mde.push_back(se_of(mde[t].s1, mde[t].s2, opts.n_paths));
    table.se_mdd.push_back(se_of(mdd[t].s1, mdd[t].s2, opts.n_paths));
  }
  return table;
}

double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Shiryaev statistic on the log-odds scale, exposed as a probability.
struct ShiryaevStat {
  const QcdModel* model;
  double log_rho, log_1m_rho;
  double log_odds = -std::numeric_limits<double>::infinity();

  double operator()(const HiddenStep& h) {
    const double l = log_density(model->post, h.y) - log_density(model->pre, h.y);
    log_odds = logaddexp(log_odds, log_rho) - log_1m_rho + l;
    return 1.0 / (1.0 + std::exp(-log_odds));
  }
};

double shiryaev_rate(const QcdModel& model, const ShiryaevOptions& sopts) {
  if (!is_iid(model.pre) || !is_iid(model.post)) throw ValidationError("Shiryaev recursion needs i.i.d. observations");
  if (sopts.rho) {
    if (!(*sopts.rho > 0.0 && *sopts.rho < 1.0)) throw ValidationError("Shiryaev rho must lie in (0, 1)");
    return *sopts.rho;
  }
  if (auto* g = std::get_if<Geometric>(&model.change)) {
    if (!(g->p < 1.0)) throw ValidationError("Shiryaev recursion needs p < 1");
    return g->p;
  }
  throw ValidationError("Shiryaev recursion requires geometric prior");
}

}  // namespace

std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  if (n == 0 || !(hi > lo)) throw ValidationError("uniform grid needs n >= 1 and hi > lo");
  std::vector<double> g(n);
  for (std::size_t t = 1; t <= n; ++t) g[t - 1] = lo + (hi - lo) * static_cast<double>(t) / static_cast<double>(n);
  return g;
}

ThresholdTable threshold_sweep(const QcdModel& model, const SisSpec& spec, const std::vector<double>& grid,
                               const McOptions& opts) {
  validate(model);
  validate(spec);
  if (spec.dim() != 1) throw ValidationError("threshold sweep needs a one-dimensional SIS");
  return sweep_core(model, grid, opts, [&] {
    return [&spec, state = sis_reset(spec)](const HiddenStep& h) mutable {
      sis_step_inplace(spec, state, h.y);
      return state.s(0);
    };
  });
}

CusumStar cusum_star(const ThresholdTable& table, double kappa) {
  if (table.grid.empty()) throw ValidationError("empty threshold table");
  CusumStar best;
  best.cost = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < table.grid.size(); ++t) {
    const double j = table.mdd[t] + kappa * table.mde[t];
    if (j < best.cost) {
      best.cost = j;
      best.h = table.grid[t];
      best.index = t;
      best.se = std::sqrt(table.se_mdd[t] * table.se_mdd[t] + kappa * kappa * table.se_mde[t] * table.se_mde[t]);
    }
  }
  return best;
}

double shiryaev_step(double p, double rho, double log_f0, double log_f1) {
  if (p >= 1.0) return 1.0;
  const double lo = p <= 0.0 ? -std::numeric_limits<double>::infinity() : std::log(p) - std::log1p(-p);
  const double next = logaddexp(lo, std::log(rho)) - std::log1p(-rho) + (log_f1 - log_f0);
  return 1.0 / (1.0 + std::exp(-next));
}

ThresholdTable shiryaev_sweep(const QcdModel& model, const std::vector<double>& grid, const McOptions& opts,
                              const ShiryaevOptions& sopts) {
  validate(model);
  const double rho = shiryaev_rate(model, sopts);
  for (double h : grid)
    if (!(h > 0.0 && h <= 1.0)) throw ValidationError("Shiryaev thresholds must lie in (0, 1]");
  return sweep_core(model, grid, opts, [&] { return ShiryaevStat{&model, std::log(rho), std::log1p(-rho)}; });
}

EvalReport eval_policy(const QcdModel& model, const Policy& policy, double kappa, const McOptions& opts) {
  validate(model);
  const bool shiryaev = std::holds_alternative<ShiryaevRule>(policy.rule);
  if (!shiryaev) validate(policy.spec);
  if (auto* tr = std::get_if<ThresholdRule>(&policy.rule); tr && policy.spec.dim() != 1)
    throw ValidationError("threshold rule needs a one-dimensional SIS");
  if (auto* br = std::get_if<BoxRule>(&policy.rule);
      br && static_cast<Eigen::Index>(br->h.size()) != policy.spec.dim())
    throw ValidationError("box rule needs one threshold per SIS component");
  if (auto* qf = std::get_if<QFunction>(&policy.rule)) {
    validate(*qf);
    if (qf->basis.sis_dim() != policy.spec.dim()) throw ValidationError("SIS dimension does not match basis");
  }
  double shiryaev_rho = 0.0;
  if (auto* sr = std::get_if<ShiryaevRule>(&policy.rule)) shiryaev_rho = shiryaev_rate(model, {sr->rho});

  const BlockPlan plan{opts.n_paths};
  struct Partial {
    Moments mdd, mde, cost, fa;
    std::size_t capped = 0;
  };
  std::vector<Partial> parts(plan.count());
  for_each_block(plan, opts.threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Partial& part = parts[b];
    for (std::size_t i = begin; i < end; ++i) {
      PathSimulator sim(model, make_stream(opts.seed, StreamTag::kEvalPath, i));
      SisState state;
      if (!shiryaev) state = sis_reset(policy.spec);
      ShiryaevStat sstat{&model, std::log(std::max(shiryaev_rho, 1e-300)), std::log1p(-shiryaev_rho)};
      std::int64_t stop = opts.step_cap;
      for (std::int64_t k = 0; k < opts.step_cap; ++k) {
        const HiddenStep h = sim.next();
        bool halt = false;
        if (shiryaev) {
          halt = sstat(h) >= std::get<ShiryaevRule>(policy.rule).h;
        } else {
          sis_step_inplace(policy.spec, state, h.y);
          halt = std::visit(
              [&](const auto& r) -> bool {
                using T = std::decay_t<decltype(r)>;
                if constexpr (std::is_same_v<T, ThresholdRule>) {
                  return state.s(0) >= r.h;
                } else if constexpr (std::is_same_v<T, BoxRule>) {
                  for (std::size_t c = 0; c < r.h.size(); ++c)
                    if (state.s(static_cast<Eigen::Index>(c)) >= r.h[c]) return true;
                  return false;
                } else if constexpr (std::is_same_v<T, QFunction>) {
                  return greedy(r, state.s) == 1;
                } else {
                  return false;
                }
              },
              policy.rule);
        }
        if (halt) {
          stop = k;
          break;
        }
      }
      if (stop == opts.step_cap) ++part.capped;
      const std::int64_t tau = sim.change_time();
      const double mde = static_cast<double>(std::max<std::int64_t>(0, tau - stop));
      const double mdd = static_cast<double>(std::max<std::int64_t>(0, stop - tau));
      part.mde.add(mde);
      part.mdd.add(mdd);
      part.cost.add(mdd + kappa * mde);
      part.fa.add(stop < tau ? 1.0 : 0.0);
    }
  });
  Partial total;
  for (const auto& part : parts) {
    total.mdd.s1 += part.mdd.s1;
    total.mdd.s2 += part.mdd.s2;
    total.mde.s1 += part.mde.s1;
    total.mde.s2 += part.mde.s2;
    total.cost.s1 += part.cost.s1;
    total.cost.s2 += part.cost.s2;
    total.fa.s1 += part.fa.s1;
    total.fa.s2 += part.fa.s2;
    total.capped += part.capped;
  }
  const std::size_t n = opts.n_paths;
  if (static_cast<double>(total.capped) > 0.01 * static_cast<double>(n)) {
    std::ostringstream os;
    os << "policy fails to stop: " << total.capped << " of " << n << " paths hit the step cap";
    throw NumericalError(os.str());
  }
  EvalReport r;
  r.kappa = kappa;
  r.n_paths = n;
  r.capped_paths = total.capped;
  r.mdd = mean_of(total.mdd.s1, n);
  r.mde = mean_of(total.mde.s1, n);
  r.cost = r.mdd + kappa * r.mde;
  r.p_fa = mean_of(total.fa.s1, n);
  r.se_mdd = se_of(total.mdd.s1, total.mdd.s2, n);
  r.se_mde = se_of(total.mde.s1, total.mde.s2, n);
  r.se_cost = se_of(total.cost.s1, total.cost.s2, n);
  r.se_p_fa = se_of(total.fa.s1, total.fa.s2, n);
  return r;
}

Histogram freedman_diaconis(const std::vector<double>& x) {
  Histogram h;
  if (x.empty()) return h;
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double lo = s.front(), hi = s.back();
  const double iqr = quantile(0.75) - quantile(0.25);
  std::size_t bins = 1;
  if (iqr > 0.0 && hi > lo) {
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(s.size()));
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    bins = std::clamp<std::size_t>(bins, 1, 10'000);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const double a = hi > lo ? lo : lo - 0.5;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(a + span * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : s) {
    auto idx = static_cast<std::size_t>((v - a) / span * static_cast<double>(bins));
    h.counts[std::min(idx, bins - 1)]++;
  }
  return h;
}

void finish_batch_means(BatchMeansReport& report) {
  std::vector<const BatchRun*> ok;
  for (const auto& r : report.runs)
    if (r.ok) ok.push_back(&r);
  report.thresholds.clear();
  for (const auto* r : ok)
    if (r->threshold) report.thresholds.push_back(*r->threshold);
  report.threshold_hist = freedman_diaconis(report.thresholds);
  const std::size_t need = std::max<std::size_t>(2, (report.m + 1) / 2);
  report.sigma_valid = ok.size() >= need;
  if (ok.empty()) return;
  const Eigen::Index d = ok.front()->theta.size();
  const auto n = static_cast<Eigen::Index>(ok.size());
  report.theta_bar = Eigen::VectorXd::Zero(d);
  for (const auto* r : ok) report.theta_bar += r->theta;
  report.theta_bar /= static_cast<double>(n);
  report.z.resize(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto* r = ok[static_cast<std::size_t>(i)];
    report.z.col(i) = std::sqrt(static_cast<double>(r->sample_count)) * (r->theta - report.theta_bar);
  }
  report.z_hist.clear();
  for (Eigen::Index c = 0; c < d; ++c) {
    std::vector<double> col;
    for (Eigen::Index i = 0; i < n; ++i) col.push_back(report.z(c, i));
    report.z_hist.push_back(freedman_diaconis(col));
  }
  if (report.sigma_valid) {
    const Eigen::VectorXd zbar = report.z.rowwise().mean();
    const Eigen::MatrixXd zc = report.z.colwise() - zbar;
    report.sigma = zc * zc.transpose() / static_cast<double>(n - 1);
  }
}

BatchMeansReport batch_means(const QcdModel& model, const SisSpec& spec, const RbfBasis& basis,
                             const TrainConfig& cfg, const BatchOptions& opts) {
  if (opts.m < 2) throw ValidationError("batch means needs M >= 2");
  BatchMeansReport report;
  report.m = opts.m;
  report.runs.resize(opts.m);
  for_each_block(BlockPlan{opts.m, 1}, opts.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      BatchRun& run = report.runs[i];
      run.seed = opts.same_seed ? opts.seed : stream_seed(opts.seed, StreamTag::kBatchRun, i);
      TrainConfig c = cfg;
      c.seed = run.seed;
      try {
        const TrainResult tr = train(model, spec, basis, c);
        run.theta = tr.theta_final;
        run.sample_count = tr.sample_count;
        run.ok = true;
        if (basis.sis_dim() == 1) {
          const auto th = threshold_of(QFunction{basis, tr.theta_final}, opts.scan);
          if (th.is_threshold) run.threshold = th.h;
        }
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
    }
  });
  finish_batch_means(report);
  return report;
}

std::vector<RegionCell> decision_region(const QFunction& qf, const Grid2d& grid, double h1, double h2) {
  validate(qf);
  if (qf.basis.sis_dim() != 2) throw ValidationError("decision region needs a two-dimensional SIS");
  if (grid.n1 < 2 || grid.n2 < 2) throw ValidationError("decision region grid needs >= 2 points per axis");
  std::vector<RegionCell> out;
  out.reserve(grid.n1 * grid.n2);
  Eigen::VectorXd s(2);
  for (std::size_t i = 0; i < grid.n1; ++i) {
    for (std::size_t j = 0; j < grid.n2; ++j) {
      s(0) = grid.lo1 + (grid.hi1 - grid.lo1) * static_cast<double>(i) / static_cast<double>(grid.n1 - 1);
      s(1) = grid.lo2 + (grid.hi2 - grid.lo2) * static_cast<double>(j) / static_cast<double>(grid.n2 - 1);
      out.push_back({s(0), s(1), greedy(qf, s), (s(0) >= h1 || s(1) >= h2) ? 1 : 0});
    }
  }
  return out;
}

}  // namespace qcdq
