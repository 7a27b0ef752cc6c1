#include "qcdq/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qcdq/error.hpp"
#include "qcdq/parallel.hpp"

namespace qcdq {

namespace {

Eigen::VectorXd min_distance_widths(const Eigen::MatrixXd& c, double b) {
  const Eigen::Index k = c.rows();
  Eigen::VectorXd w(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l < k; ++l)
      if (l != i) best = std::min(best, (c.row(i) - c.row(l)).norm());
    w(i) = b * best;
  }
  return w;
}

void sort_rows(Eigen::MatrixXd& c) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(c.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (c(a, j) < c(b, j)) return true;
      if (c(a, j) > c(b, j)) return false;
    }
    return false;
  });
  Eigen::MatrixXd out(c.rows(), c.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = c.row(idx[i]);
  c = std::move(out);
}

Eigen::Index count_distinct_rows(const Eigen::MatrixXd& x, Eigen::Index stop_at) {
  Eigen::MatrixXd s = x;
  sort_rows(s);
  Eigen::Index n = s.rows() > 0 ? 1 : 0;
  for (Eigen::Index i = 1; i < s.rows() && n < stop_at; ++i)
    if (s.row(i) != s.row(i - 1)) ++n;
  return n;
}

// Squared distance from each sample to its nearest center, and the center index.
double assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, std::vector<Eigen::Index>& label,
              Eigen::VectorXd& d2) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = (x.row(i) - c.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    label[static_cast<std::size_t>(i)] = arg;
    d2(i) = best;
    inertia += best;
  }
  return inertia;
}

// Index drawn with probability proportional to weights (all-zero weights: uniform).
Eigen::Index draw_weighted(const Eigen::VectorXd& w, Rng& rng) {
  const double total = w.sum();
  if (!(total > 0.0)) return static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(w.size()));
  double u = uniform01(rng) * total;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    u -= w(i);
    if (u < 0.0) return i;
  }
  return w.size() - 1;
}

KMeansResult lloyd_once(const Eigen::MatrixXd& x, Eigen::Index k, Rng& rng, const KMeansOptions& opts) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  // k-means++ seeding
  c.row(0) = x.row(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)));
  Eigen::VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (Eigen::Index j = 1; j < k; ++j) {
    c.row(j) = x.row(draw_weighted(d2, rng));
    d2 = d2.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
  }

  std::vector<Eigen::Index> label(static_cast<std::size_t>(n));
  double inertia = assign(x, c, label, d2);
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(label[static_cast<std::size_t>(i)]) += x.row(i);
      count(label[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (count(j) > 0.0) {
        c.row(j) = sum.row(j) / count(j);
      } else {
        // Empty cluster: move it to the sample farthest from its center.
        Eigen::Index far = 0;
        d2.maxCoeff(&far);
        c.row(j) = x.row(far);
        d2(far) = 0.0;
      }
    }
    const double next = assign(x, c, label, d2);
    const double change = std::abs(inertia - next) / std::max(inertia, std::numeric_limits<double>::min());
    inertia = next;
    if (change < opts.rel_tol) break;
  }
  return {c, inertia};
}

}  // namespace

void validate(const RbfBasis& basis) {
  if (basis.centers.rows() < 2) throw ValidationError("basis needs K >= 2 centers");
  if (basis.centers.cols() < 1) throw ValidationError("basis centers need dimension >= 1");
  if (basis.widths.size() != basis.centers.rows()) throw ValidationError("basis widths/centers size mismatch");
  if (!(basis.b > 0.0)) throw ValidationError("basis b must be positive");
  for (Eigen::Index i = 0; i < basis.widths.size(); ++i)
    if (!(basis.widths(i) > 0.0) || !std::isfinite(basis.widths(i)))
      throw ValidationError("basis widths must be positive");
}

RbfBasis make_basis(Eigen::MatrixXd centers, double b, WidthConvention convention) {
  RbfBasis basis;
  basis.widths = min_distance_widths(centers, b);
  basis.centers = std::move(centers);
  basis.b = b;
  basis.convention = convention;
  validate(basis);
  return basis;
}

double kmeans_inertia(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers) {
  std::vector<Eigen::Index> label(static_cast<std::size_t>(samples.rows()));
  Eigen::VectorXd d2(samples.rows());
  return assign(samples, centers, label, d2);
}

KMeansResult kmeans(const Eigen::MatrixXd& samples, Eigen::Index k, Rng& rng, const KMeansOptions& opts) {
  if (k < 1) throw ValidationError("k-means needs k >= 1");
  if (count_distinct_rows(samples, k) < k) throw ValidationError("K distinct centers unavailable");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, opts.n_init); ++r) {
    auto res = lloyd_once(samples, k, rng, opts);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  sort_rows(best.centers);
  return best;
}

RbfBasis fit_centers(const Eigen::MatrixXd& samples, Eigen::Index k, double b, Rng& rng,
                     WidthConvention convention, const KMeansOptions& opts) {
  if (k < 2) throw ValidationError("basis needs K >= 2 centers");
  auto res = kmeans(samples, k, rng, opts);
  // Merge coincident centers; the basis needs K distinct ones.
  const double scale = std::max(1.0, res.centers.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 1; i < res.centers.rows(); ++i)
    if ((res.centers.row(i) - res.centers.row(i - 1)).norm() <= 1e-12 * scale)
      throw ValidationError("K distinct centers unavailable");
  return make_basis(std::move(res.centers), b, convention);
}

Eigen::VectorXd rbf_values(const RbfBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& s) {
  const Eigen::Index k = basis.size();
  Eigen::VectorXd out(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double d2 = (basis.centers.row(i).transpose() - s).squaredNorm();
    const double w = basis.widths(i);
    out(i) = basis.convention == WidthConvention::kPrecision ? std::exp(-0.5 * w * w * d2)
                                                              : std::exp(-0.5 * d2 / (w * w));
  }
  return out;
}

Eigen::VectorXd features(const RbfBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& s, int u) {
  if (s.size() != basis.sis_dim()) throw ValidationError("SIS dimension does not match basis");
  const Eigen::Index k = basis.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * k);
  out.segment(u == 0 ? 0 : k, k) = rbf_values(basis, s);
  return out;
}

Eigen::MatrixXd sample_sis_points(const QcdModel& model, const SisSpec& spec, std::size_t n_paths, double eta,
                                  std::uint64_t seed, unsigned threads) {
  validate(model);
  validate(spec);
  if (!(eta > 0.0)) throw ValidationError("eta must be positive");
  constexpr std::int64_t kCap = 1'000'000;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_paths), spec.dim());
  for_each_block(BlockPlan{n_paths}, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = make_stream(seed, StreamTag::kBasisPath, i);
      PathSimulator sim(model, Rng(rng()));
      SisState state = sis_reset(spec);
      Eigen::VectorXd chosen = state.s;
      // Reservoir of size one over the states visited inside the ball.
      for (std::int64_t t = 1;; ++t) {
        if (t > kCap) throw NumericalError("basis sample path exceeded the step cap");
        sis_step_inplace(spec, state, sim.next().y);
        if (state.s.cwiseAbs().maxCoeff() >= eta) break;
        if (uniform01(rng) * static_cast<double>(t + 1) < 1.0) chosen = state.s;
      }
      out.row(static_cast<Eigen::Index>(i)) = chosen.transpose();
    }
  });
  return out;
}

}  // namespace qcdq
