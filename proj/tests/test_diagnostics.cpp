#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gsvgd/diagnostics.hpp"
#include "gsvgd/engine.hpp"
#include "gsvgd/gaussian_mrf.hpp"
#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

using namespace gsvgd;

namespace {

std::vector<CoordinateKernel> local_kernels(const GraphicalModel &model,
                                            const Matrix &particles) {
  KernelSpec spec;
  spec.variant = KernelVariant::Local;
  RngStream rng(0);
  return coordinate_kernels(spec, model, particles, rng);
}

std::vector<CoordinateKernel> global_kernels(const GraphicalModel &model,
                                             const Matrix &particles) {
  KernelSpec spec;
  spec.variant = KernelVariant::Global;
  RngStream rng(0);
  return coordinate_kernels(spec, model, particles, rng);
}

// 3-node Gaussian chain with a fixed tridiagonal precision
std::pair<GraphicalModel, GaussianMrfParams> chain3() {
  GaussianMrfParams p;
  p.A.resize(3, 3);
  p.A << 1.0, 0.4, 0.0, 0.4, 1.2, -0.3, 0.0, -0.3, 0.9;
  p.b.resize(3);
  p.b << 0.2, -0.1, 0.3;
  return {gaussian_model_from_params(p), p};
}

// draws from the chain, optionally replacing x0 by a conditional redraw with
// inflated variance (q construction for the discrimination test)
Matrix chain3_sample(const GaussianMrfParams &p, Eigen::Index n, double var_factor,
                     RngStream &rng) {
  Matrix sample = gaussian_exact_sample(p, n, rng);
  if (var_factor == 1.0) return sample;
  auto [mean, cov] = gaussian_exact_moments(p);
  for (Eigen::Index l = 0; l < n; ++l) {
    // chain: x0 | rest depends on x1 only, precision A00
    const double cond_mean =
        mean(0) - p.A(0, 1) / p.A(0, 0) * (sample(l, 1) - mean(1));
    const double cond_sd = std::sqrt(var_factor / p.A(0, 0));
    sample(l, 0) = cond_mean + cond_sd * rng.normal();
  }
  return sample;
}

}  // namespace

TEST_CASE("ksd_squared single particle at the mode") {
  auto [model, params] = standard_gaussian(1);
  Matrix particles = Matrix::Zero(1, 1);
  CoordinateKernel ker;
  ker.domain = {0};
  ker.bandwidth = 1.0;
  const auto est = ksd_squared(particles, model, {ker}, StatisticKind::V);
  CHECK(est.total == doctest::Approx(2.0));  // u(0,0) = 0 + 0 + 0 + 2/h
  CHECK(est.per_coordinate(0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(ksd_squared(particles, model, {ker}, StatisticKind::U),
                  std::invalid_argument);
}

TEST_CASE("ksd_squared agrees with a brute-force pair sum") {
  // q = N(1, 1) against p = N(0, 1): the U-statistic must be clearly positive
  auto [model, params] = standard_gaussian(1);
  RngStream rng(3);
  const Eigen::Index n = 2000;
  Matrix particles(n, 1);
  for (Eigen::Index l = 0; l < n; ++l) particles(l, 0) = 1.0 + rng.normal();

  const auto kernels = local_kernels(model, particles);
  const double h = kernels[0].bandwidth;
  const auto est = ksd_squared(particles, model, kernels, StatisticKind::U);

  // independent oracle: direct double sum with hand-written formulas
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      const double x = particles(a, 0), y = particles(b, 0);
      const double sx = -x, sy = -y;  // score of N(0,1)
      const double k = std::exp(-(x - y) * (x - y) / h);
      const double dky = (2.0 / h) * (x - y) * k;
      const double dkx = -dky;
      const double dkxy = (2.0 / h) * k - (4.0 / (h * h)) * (x - y) * (x - y) * k;
      total += sx * sy * k + sx * dky + sy * dkx + dkxy;
    }
  total /= static_cast<double>(n) * static_cast<double>(n - 1);
  CHECK(est.total == doctest::Approx(total).epsilon(1e-10));
  CHECK(est.total > 0.1);
}

TEST_CASE("ksd U-statistic is near zero on exact draws") {
  auto [model, params] = standard_gaussian(2);
  RngStream rng(5);
  const Matrix sample = gaussian_exact_sample(params, 1500, rng);
  for (bool local : {true, false}) {
    const auto kernels =
        local ? local_kernels(model, sample) : global_kernels(model, sample);
    const auto est = ksd_squared(sample, model, kernels, StatisticKind::U);
    const double se = ksd_u_standard_error(est);
    CHECK(std::abs(est.total) <= 3.0 * se);
  }
}

TEST_CASE("ksd V-statistic is nonnegative and sums its coordinates") {
  RngStream rng(7);
  auto [model, params] = build_gaussian_mrf({{0, 1}, {1, 2}}, 3, rng);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix particles(6, 3);
    for (int l = 0; l < 6; ++l)
      for (int j = 0; j < 3; ++j) particles(l, j) = 2.0 * rng.normal();
    const auto est =
        ksd_squared(particles, model, local_kernels(model, particles), StatisticKind::V);
    CHECK(est.total >= -1e-10);
    CHECK(est.total == doctest::Approx(est.per_coordinate.sum()));
  }
}

TEST_CASE("ksd_oracle_check: analytic vs numeric Stein operator") {
  RngStream rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const int d = 2 + static_cast<int>(rng.below(2));
    const int n = 2 + static_cast<int>(rng.below(9));
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < d; ++i) edges.emplace_back(i, i + 1);
    auto [model, params] = build_gaussian_mrf(edges, d, rng);
    Matrix particles(n, d);
    for (int l = 0; l < n; ++l)
      for (int j = 0; j < d; ++j) particles(l, j) = rng.normal();
    CHECK(ksd_oracle_check(particles, model, local_kernels(model, particles)) < 1e-4);
  }
  // single particle, fixed h = 1: both paths reduce to s^2 + 2/h
  auto [model1, params1] = standard_gaussian(1);
  Matrix one = Matrix::Constant(1, 1, 0.7);
  CoordinateKernel ker;
  ker.domain = {0};
  ker.bandwidth = 1.0;
  CHECK(ksd_oracle_check(one, model1, {ker}) < 1e-4);
}

TEST_CASE("global-kernel KSD equals the single-kernel form of the original method") {
  RngStream rng(13);
  auto [model, params] = build_gaussian_mrf({{0, 1}, {0, 2}}, 3, rng);
  Matrix particles(8, 3);
  for (int l = 0; l < 8; ++l)
    for (int j = 0; j < 3; ++j) particles(l, j) = rng.normal();
  const auto kernels = global_kernels(model, particles);
  const double h = kernels[0].bandwidth;
  const auto est = ksd_squared(particles, model, kernels, StatisticKind::V);

  // scalar-kernel oracle: u(x,y) = s(x)'s(y) k + s(x)'grad_y k + s(y)'grad_x k
  //                                + sum_i d2k/dx_i dy_i
  double total = 0.0;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      const Vector x = particles.row(a).transpose();
      const Vector y = particles.row(b).transpose();
      const Vector sx = model.score(x), sy = model.score(y);
      const double sq = (x - y).squaredNorm();
      const double k = std::exp(-sq / h);
      const Vector grad_y = (2.0 / h) * (x - y) * k;
      const Vector grad_x = -grad_y;
      const double trace = (2.0 * 3 / h) * k - (4.0 / (h * h)) * sq * k;
      total += sx.dot(sy) * k + sx.dot(grad_y) + sy.dot(grad_x) + trace;
    }
  total /= 64.0;
  CHECK(est.total == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("local KSD terms ignore coordinates outside the closed blanket") {
  auto [model, params] = chain3();
  RngStream rng(17);
  Matrix particles(12, 3);
  for (int l = 0; l < 12; ++l)
    for (int j = 0; j < 3; ++j) particles(l, j) = rng.normal();
  const auto base =
      ksd_squared(particles, model, local_kernels(model, particles), StatisticKind::V);

  // C_0 = {0, 1}: perturbing column 2 must leave per_coordinate[0] untouched
  Matrix perturbed = particles;
  for (int l = 0; l < 12; ++l) perturbed(l, 2) += rng.normal();
  const auto moved =
      ksd_squared(perturbed, model, local_kernels(model, perturbed), StatisticKind::V);
  CHECK(std::abs(moved.per_coordinate(0) - base.per_coordinate(0)) <= 1e-10);
  // C_2 = {1, 2}: same with column 0
  Matrix perturbed2 = particles;
  for (int l = 0; l < 12; ++l) perturbed2(l, 0) += rng.normal();
  const auto moved2 =
      ksd_squared(perturbed2, model, local_kernels(model, perturbed2), StatisticKind::V);
  CHECK(std::abs(moved2.per_coordinate(2) - base.per_coordinate(2)) <= 1e-10);
}

TEST_CASE("ksd detects an inflated conditional variance") {
  auto [model, params] = chain3();
  RngStream rng(19);
  const Eigen::Index n = 2000;

  const Matrix null_sample = chain3_sample(params, n, 1.0, rng);
  const auto null_est = ksd_squared(null_sample, model, local_kernels(model, null_sample),
                                    StatisticKind::U);
  CHECK(std::abs(null_est.total) <= 3.0 * ksd_u_standard_error(null_est));

  const Matrix bad_sample = chain3_sample(params, n, 2.0, rng);
  const auto bad_est =
      ksd_squared(bad_sample, model, local_kernels(model, bad_sample), StatisticKind::U);
  CHECK(bad_est.total > 5.0 * ksd_u_standard_error(bad_est));
}

TEST_CASE("mmd_squared") {
  RngStream rng(23);
  Matrix a(20, 2), b(25, 2);
  for (int l = 0; l < 20; ++l)
    for (int j = 0; j < 2; ++j) a(l, j) = rng.normal();
  for (int l = 0; l < 25; ++l)
    for (int j = 0; j < 2; ++j) b(l, j) = 0.5 + rng.normal();

  CHECK(mmd_squared(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mmd_squared(a, b) == doctest::Approx(mmd_squared(b, a)));
  CHECK(mmd_squared(a, b) >= -1e-10);

  Matrix p0 = Matrix::Zero(1, 1);
  Matrix p1 = Matrix::Ones(1, 1);
  // pooled median distance 1 -> h = 1
  CHECK(mmd_squared(p0, p1) == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)));
  CHECK_THROWS_AS(mmd_squared(Matrix(0, 1), p1), std::invalid_argument);
}

TEST_CASE("moment_errors") {
  Matrix pair(2, 1);
  pair << -1.0, 1.0;
  const auto [m1, m2] = moment_errors(pair, Vector::Zero(1), Vector::Ones(1));
  CHECK(m1 == doctest::Approx(0.0));
  CHECK(m2 == doctest::Approx(0.0));

  // one particle at the mean: second-moment error is the squared variance
  GaussianMrfParams p;
  p.A = Matrix::Constant(1, 1, 2.0);
  p.b = Vector::Constant(1, 1.0);
  auto [mean, cov] = gaussian_exact_moments(p);
  Matrix single(1, 1);
  single << mean(0);
  const Vector second = cov.diagonal() + mean.cwiseProduct(mean);
  const auto [e1, e2] = moment_errors(single, mean, second);
  CHECK(e1 == doctest::Approx(0.0));
  CHECK(e2 == doctest::Approx(cov(0, 0) * cov(0, 0)));
}

TEST_CASE("localization_rmse") {
  std::vector<Eigen::Vector2d> truth{{0.2, -0.3}, {-0.5, 0.1}};
  Matrix particles(3, 4);
  for (int l = 0; l < 3; ++l) particles.row(l) << 0.2, -0.3, -0.5, 0.1;
  CHECK(localization_rmse(particles, truth) == doctest::Approx(0.0));

  std::vector<Eigen::Vector2d> one{{0.0, 0.0}};
  Matrix offset(4, 2);
  for (int l = 0; l < 4; ++l) offset.row(l) << 0.3, 0.4;
  CHECK(localization_rmse(offset, one) == doctest::Approx(0.5));

  Matrix permuted = offset;
  permuted.row(0).swap(permuted.row(3));
  CHECK(localization_rmse(permuted, one) == doctest::Approx(0.5));
}

TEST_CASE("result rows serialize to the fixed CSV schema") {
  CHECK(csv_header() ==
        "iteration,n,algorithm,kernel_variant,seed,trial,mse_mean,mse_second,mmd2,ksd2,rmse");
  ResultRow row;
  row.iteration = 100;
  row.n = 50;
  row.algorithm = "graphical";
  row.kernel_variant = "local";
  row.seed = 7;
  row.trial = 2;
  row.mse_mean = 0.5;
  row.rmse = 0.25;
  CHECK(to_csv(row) == "100,50,graphical,local,7,2,0.5,,,,0.25");
}
