#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"

namespace gsvgd {

enum class StatisticKind { V, U };

// Coordinate-wise kernelized Stein discrepancy estimate,
// S^2 = sum_i avg_{l,m} u_i(x^l, x^m).
struct DiscrepancyEstimate {
  double total = 0.0;
  Vector per_coordinate;
  StatisticKind kind = StatisticKind::V;
  Eigen::Index n = 0;
  // moments of the coordinate-summed u over off-diagonal (unordered) pairs;
  // feeds the degenerate-U null standard error
  double u_offdiag_mean = 0.0;
  double u_offdiag_var = 0.0;
};

// Standard error of the U-statistic under the Stein-identity null, where the
// estimator is degenerate: Var(U) ~ 2 Var(u) / (n (n-1)).
inline double ksd_u_standard_error(const DiscrepancyEstimate &est) {
  if (est.n < 2) throw std::invalid_argument("ksd_u_standard_error: need n >= 2");
  return std::sqrt(2.0 * est.u_offdiag_var /
                   (static_cast<double>(est.n) * static_cast<double>(est.n - 1)));
}

namespace detail {

// kernel value and the 1st/cross derivatives in coordinate i for one pair,
// given the per-coordinate squared diffs of the pair
struct PairKernelTerms {
  double k, dx, dy, dxy;
};

inline PairKernelTerms pair_kernel_terms(const CoordinateKernel &ker, const Vector &sq,
                                         double total_sq, double diff_i) {
  auto rbf_parts = [&](const std::vector<int> &domain, double h, bool full) {
    double s = 0.0;
    if (full) {
      s = total_sq;
    } else {
      for (int j : domain) s += sq(j);
    }
    const double k = std::exp(-s / h);
    PairKernelTerms t;
    t.k = k;
    t.dx = -(2.0 / h) * diff_i * k;
    t.dy = -t.dx;
    t.dxy = (2.0 / h) * k - (4.0 / (h * h)) * diff_i * diff_i * k;
    return t;
  };
  const bool local_full = ker.domain.size() == static_cast<std::size_t>(sq.size());
  PairKernelTerms t = rbf_parts(ker.domain, ker.bandwidth, local_full);
  if (ker.combined()) {
    const PairKernelTerms g = rbf_parts(ker.global_domain, ker.global_bandwidth, true);
    const double a = ker.alpha;
    t.k = a * t.k + (1 - a) * g.k;
    t.dx = a * t.dx + (1 - a) * g.dx;
    t.dy = a * t.dy + (1 - a) * g.dy;
    t.dxy = a * t.dxy + (1 - a) * g.dxy;
  }
  return t;
}

}  // namespace detail

// Estimates S(q||p)^2 = sum_i E_{x,x'~q}[ u_i(x, x') ] with
//   u_i(x,y) = s_i(x) s_i(y) k_i + s_i(x) d_{y_i} k_i + s_i(y) d_{x_i} k_i
//              + d^2_{x_i y_i} k_i.
// V includes diagonal pairs (1/n^2), U excludes them (1/(n(n-1))).
inline DiscrepancyEstimate ksd_squared(const Matrix &particles, const GraphicalModel &model,
                                       const std::vector<CoordinateKernel> &kernels,
                                       StatisticKind kind) {
  const Eigen::Index n = particles.rows();
  const int d = model.dim();
  if (kernels.size() != static_cast<std::size_t>(d))
    throw std::invalid_argument("ksd_squared: need one kernel per coordinate");
  if (kind == StatisticKind::U && n < 2)
    throw std::invalid_argument("ksd_squared: U-statistic needs n >= 2");

  Matrix scores(n, d);
  for (Eigen::Index l = 0; l < n; ++l)
    scores.row(l) = model.score(particles.row(l).transpose()).transpose();

  DiscrepancyEstimate est;
  est.kind = kind;
  est.n = n;
  est.per_coordinate = Vector::Zero(d);
  double off_sum = 0.0, off_sumsq = 0.0;

  Vector sq(d);
  for (Eigen::Index l = 0; l < n; ++l) {
    for (Eigen::Index m = l + 1; m < n; ++m) {
      double total_sq = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = particles(l, j) - particles(m, j);
        sq(j) = diff * diff;
        total_sq += sq(j);
      }
      double u_total = 0.0;
      for (int i = 0; i < d; ++i) {
        const double diff_i = particles(l, i) - particles(m, i);
        const auto t = detail::pair_kernel_terms(kernels[static_cast<std::size_t>(i)], sq,
                                                 total_sq, diff_i);
        const double u = scores(l, i) * scores(m, i) * t.k + scores(l, i) * t.dy +
                         scores(m, i) * t.dx + t.dxy;
        est.per_coordinate(i) += 2.0 * u;  // u_i is symmetric in (l, m)
        u_total += u;
      }
      off_sum += u_total;
      off_sumsq += u_total * u_total;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  if (pairs > 0) {
    est.u_offdiag_mean = off_sum / pairs;
    est.u_offdiag_var = off_sumsq / pairs - est.u_offdiag_mean * est.u_offdiag_mean;
    if (est.u_offdiag_var < 0) est.u_offdiag_var = 0;
  }

  if (kind == StatisticKind::V) {
    // add diagonal terms u_i(x, x) = s_i(x)^2 + 2/h (kernel at zero distance)
    const Vector zero_sq = Vector::Zero(d);
    for (Eigen::Index l = 0; l < n; ++l)
      for (int i = 0; i < d; ++i) {
        const auto t = detail::pair_kernel_terms(kernels[static_cast<std::size_t>(i)],
                                                 zero_sq, 0.0, 0.0);
        est.per_coordinate(i) += scores(l, i) * scores(l, i) * t.k + t.dxy;
      }
    est.per_coordinate /= static_cast<double>(n) * static_cast<double>(n);
  } else {
    est.per_coordinate /= static_cast<double>(n) * static_cast<double>(n - 1);
  }
  est.total = est.per_coordinate.sum();
  return est;
}

// Independent numeric route for ksd_squared (V-statistic): the Stein operator
// is applied to k_i by central finite differences in both arguments, with
// finite-difference scores. Returns max_i |analytic_i - numeric_i|.
inline double ksd_oracle_check(const Matrix &particles, const GraphicalModel &model,
                               const std::vector<CoordinateKernel> &kernels) {
  const Eigen::Index n = particles.rows();
  const int d = model.dim();
  const auto analytic = ksd_squared(particles, model, kernels, StatisticKind::V);

  // finite-difference scores, cached per (particle, coordinate)
  Matrix fd_scores(n, d);
  for (Eigen::Index l = 0; l < n; ++l) {
    const Vector x = particles.row(l).transpose();
    for (int i = 0; i < d; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      fd_scores(l, i) =
          (model.log_density_unnorm(xp) - model.log_density_unnorm(xm)) / (2.0 * h);
    }
  }

  Vector numeric = Vector::Zero(d);
  for (Eigen::Index l = 0; l < n; ++l) {
    const Vector x = particles.row(l).transpose();
    for (Eigen::Index m = 0; m < n; ++m) {
      const Vector y = particles.row(m).transpose();
      for (int i = 0; i < d; ++i) {
        const auto &ker = kernels[static_cast<std::size_t>(i)];
        // g(x, y) = s_i(x) k(x, y) + d k / d x_i by central differences
        auto g = [&](const Vector &yy) {
          const double dx = 1e-4 * std::max(1.0, std::abs(x(i)));
          Vector xp = x, xm = x;
          xp(i) += dx;
          xm(i) -= dx;
          return fd_scores(l, i) * k_eval(ker, x, yy) +
                 (k_eval(ker, xp, yy) - k_eval(ker, xm, yy)) / (2.0 * dx);
        };
        const double dy = 1e-4 * std::max(1.0, std::abs(y(i)));
        Vector yp = y, ym = y;
        yp(i) += dy;
        ym(i) -= dy;
        numeric(i) += fd_scores(m, i) * g(y) + (g(yp) - g(ym)) / (2.0 * dy);
      }
    }
  }
  numeric /= static_cast<double>(n) * static_cast<double>(n);
  return (numeric - analytic.per_coordinate).cwiseAbs().maxCoeff();
}

namespace detail {

// blocked mean of exp(-||xi - yj||^2 / h) over all (i, j)
inline double mean_rbf(const Matrix &X, const Matrix &Y, double h) {
  const Eigen::Index bx = 512, by = 512;
  const Vector sqx = X.rowwise().squaredNorm();
  const Vector sqy = Y.rowwise().squaredNorm();
  double total = 0.0;
  for (Eigen::Index i0 = 0; i0 < X.rows(); i0 += bx) {
    const Eigen::Index ni = std::min(bx, X.rows() - i0);
    for (Eigen::Index j0 = 0; j0 < Y.rows(); j0 += by) {
      const Eigen::Index nj = std::min(by, Y.rows() - j0);
      Matrix block = X.middleRows(i0, ni) * Y.middleRows(j0, nj).transpose();
      block = ((-(sqx.segment(i0, ni).replicate(1, nj) +
                  sqy.segment(j0, nj).transpose().replicate(ni, 1) - 2.0 * block)) /
               h)
                  .array()
                  .exp()
                  .matrix();
      total += block.sum();
    }
  }
  return total / (static_cast<double>(X.rows()) * static_cast<double>(Y.rows()));
}

// Deterministic stride subsample used for the pooled median on large samples.
inline Matrix stride_subsample(const Matrix &X, Eigen::Index cap) {
  if (X.rows() <= cap) return X;
  const Eigen::Index stride = (X.rows() + cap - 1) / cap;
  Matrix out((X.rows() + stride - 1) / stride, X.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < X.rows(); i += stride) out.row(r++) = X.row(i);
  return out.topRows(r);
}

}  // namespace detail

// V-statistic MMD^2 between two samples with an RBF kernel. MedianTrick takes
// h = (median pairwise distance of the pooled sample)^2; pools larger than
// 2048 rows are stride-subsampled for the median only.
inline double mmd_squared(const Matrix &a, const Matrix &b,
                          BandwidthRule rule = BandwidthRule::MedianTrick,
                          double fixed_h = 1.0) {
  if (a.rows() < 1 || b.rows() < 1)
    throw std::invalid_argument("mmd_squared: samples must be nonempty");
  if (a.cols() != b.cols()) throw std::invalid_argument("mmd_squared: dimension mismatch");
  double h = fixed_h;
  if (rule == BandwidthRule::MedianTrick) {
    Matrix pooled(a.rows() + b.rows(), a.cols());
    pooled << a, b;
    h = median_bandwidth(detail::stride_subsample(pooled, 2048), 1e-8);
  }
  return detail::mean_rbf(a, a, h) + detail::mean_rbf(b, b, h) -
         2.0 * detail::mean_rbf(a, b, h);
}

// MSE of estimated first and second moments, averaged over coordinates.
inline std::pair<double, double> moment_errors(const Matrix &particles,
                                               const Vector &true_mean,
                                               const Vector &true_second) {
  if (particles.cols() != true_mean.size() || particles.cols() != true_second.size())
    throw std::invalid_argument("moment_errors: dimension mismatch");
  const Vector mean = particles.colwise().mean().transpose();
  const Vector second = particles.array().square().matrix().colwise().mean().transpose();
  return {(mean - true_mean).squaredNorm() / static_cast<double>(true_mean.size()),
          (second - true_second).squaredNorm() / static_cast<double>(true_second.size())};
}

// RMSE of the particle-mean position estimate over sensors; particles live in
// R^{2S} with sensor s at columns (2s, 2s+1).
inline double localization_rmse(const Matrix &particles,
                                const std::vector<Eigen::Vector2d> &truth) {
  if (particles.cols() != static_cast<Eigen::Index>(2 * truth.size()))
    throw std::invalid_argument("localization_rmse: dimension mismatch");
  const Vector mean = particles.colwise().mean().transpose();
  double total = 0.0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const Eigen::Vector2d est(mean(static_cast<Eigen::Index>(2 * s)),
                              mean(static_cast<Eigen::Index>(2 * s + 1)));
    total += (est - truth[s]).squaredNorm();
  }
  return std::sqrt(total / static_cast<double>(truth.size()));
}

// One row of a result table. Optional metrics serialize as empty fields.
struct ResultRow {
  long iteration = 0;
  long n = 0;
  std::string algorithm;
  std::string kernel_variant;
  std::uint64_t seed = 0;
  long trial = 0;
  std::optional<double> mse_mean, mse_second, mmd2, ksd2, rmse;
};

inline std::string csv_header() {
  return "iteration,n,algorithm,kernel_variant,seed,trial,mse_mean,mse_second,mmd2,ksd2,rmse";
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string to_csv(const ResultRow &row) {
  auto opt = [](const std::optional<double> &v) {
    return v ? format_double(*v) : std::string();
  };
  return std::to_string(row.iteration) + "," + std::to_string(row.n) + "," + row.algorithm +
         "," + row.kernel_variant + "," + std::to_string(row.seed) + "," +
         std::to_string(row.trial) + "," + opt(row.mse_mean) + "," + opt(row.mse_second) +
         "," + opt(row.mmd2) + "," + opt(row.ksd2) + "," + opt(row.rmse);
}

}  // namespace gsvgd
