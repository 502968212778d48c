#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <set>

#include "gsvgd/gaussian_mrf.hpp"
#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

using namespace gsvgd;

namespace {

double fd_k_grad(const CoordinateKernel &ker, const Vector &x, const Vector &y, int i) {
  const double h = 1e-6;
  Vector xp = x, xm = x;
  xp(i) += h;
  xm(i) -= h;
  return (k_eval(ker, xp, y) - k_eval(ker, xm, y)) / (2.0 * h);
}

double fd_k_cross(const CoordinateKernel &ker, const Vector &x, const Vector &y, int i) {
  const double h = 1e-4;
  Vector yp = y, ym = y;
  yp(i) += h;
  ym(i) -= h;
  return (fd_k_grad(ker, x, yp, i) - fd_k_grad(ker, x, ym, i)) / (2.0 * h);
}

}  // namespace

TEST_CASE("rbf_eval") {
  Vector a(1), b(1);
  a << 0.0;
  b << 1.0;
  CHECK(rbf_eval(a, a, 1.0) == doctest::Approx(1.0));
  CHECK(rbf_eval(a, b, 1.0) == doctest::Approx(std::exp(-1.0)));
  Vector u(2), v(2);
  u << 1.0, 1.0;
  v << -1.0, -1.0;
  CHECK(rbf_eval(u, v, 2.0) == doctest::Approx(std::exp(-4.0)));
  CHECK_THROWS_AS(rbf_eval(a, b, 0.0), std::invalid_argument);
}

TEST_CASE("median_bandwidth") {
  Matrix pts(3, 1);
  pts << 0.0, 1.0, 2.0;
  CHECK(median_bandwidth(pts, 1e-8) == doctest::Approx(1.0));  // distances {1,1,2}

  Matrix same = Matrix::Zero(4, 2);
  CHECK(median_bandwidth(same, 1e-8) == doctest::Approx(1e-8));

  Matrix two(2, 1);
  two << 0.0, 2.0;
  CHECK(median_bandwidth(two, 1e-8) == doctest::Approx(4.0));

  Matrix one(1, 3);
  one << 1.0, 2.0, 3.0;
  CHECK(median_bandwidth(one, 1e-8) == doctest::Approx(1e-8));

  // lower median: 4 points on a line -> 6 distances {1,1,1,2,2,3}, lower median 1
  Matrix four(4, 1);
  four << 0.0, 1.0, 2.0, 3.0;
  CHECK(median_bandwidth(four, 1e-8) == doctest::Approx(1.0));
}

TEST_CASE("coordinate_kernels domains") {
  RngStream rng(3);

  SUBCASE("fully factorized + Local gives singleton domains") {
    auto [model, params] = standard_gaussian(4);
    Matrix particles = Matrix::Random(6, 4);
    KernelSpec spec;
    spec.variant = KernelVariant::Local;
    const auto kernels = coordinate_kernels(spec, model, particles, rng);
    for (int i = 0; i < 4; ++i) CHECK(kernels[i].domain == std::vector<int>{i});
  }

  SUBCASE("Global shares one bandwidth over full domains") {
    auto [model, params] = standard_gaussian(4);
    Matrix particles = Matrix::Random(6, 4);
    KernelSpec spec;
    spec.variant = KernelVariant::Global;
    const auto kernels = coordinate_kernels(spec, model, particles, rng);
    for (int i = 0; i < 4; ++i) {
      CHECK(kernels[i].domain.size() == 4);
      CHECK(kernels[i].bandwidth == kernels[0].bandwidth);
    }
  }

  SUBCASE("RandomSubset(5) on the complete graph") {
    std::vector<Edge> edges;
    for (int i = 0; i < 50; ++i)
      for (int j = i + 1; j < 50; ++j) edges.emplace_back(i, j);
    RngStream mrng(5);
    auto [model, params] = build_gaussian_mrf(edges, 50, mrng);
    Matrix particles = Matrix::Random(10, 50);
    KernelSpec spec;
    spec.variant = KernelVariant::RandomSubset;
    spec.subset_size = 5;
    const auto kernels = coordinate_kernels(spec, model, particles, rng);
    for (int i = 0; i < 50; ++i) {
      CHECK(kernels[i].domain.size() == 5);
      CHECK(std::binary_search(kernels[i].domain.begin(), kernels[i].domain.end(), i));
    }
    // redrawn on every call
    const auto again = coordinate_kernels(spec, model, particles, rng);
    bool any_different = false;
    for (int i = 0; i < 50; ++i)
      if (again[i].domain != kernels[i].domain) any_different = true;
    CHECK(any_different);
  }

  SUBCASE("small blankets cap the subset size") {
    auto [model, params] = build_gaussian_mrf({{0, 1}}, 3, rng);
    Matrix particles = Matrix::Random(4, 3);
    KernelSpec spec;
    spec.variant = KernelVariant::RandomSubset;
    spec.subset_size = 5;
    const auto kernels = coordinate_kernels(spec, model, particles, rng);
    CHECK(kernels[0].domain == std::vector<int>{0, 1});
    CHECK(kernels[2].domain == std::vector<int>{2});
  }
}

TEST_CASE("k_eval") {
  CoordinateKernel ker;
  ker.domain = {0, 1};
  ker.bandwidth = 1.0;
  Vector x(3), y(3);
  x << 0.0, 0.0, 9.0;
  y << 1.0, 0.0, -9.0;
  CHECK(k_eval(ker, x, y) == doctest::Approx(std::exp(-1.0)));  // coordinate 2 ignored
  CHECK(k_eval(ker, x, x) == doctest::Approx(1.0));

  SUBCASE("combined with equal parts reproduces either part") {
    CoordinateKernel comb = ker;
    comb.alpha = 0.5;
    comb.global_domain = {0, 1, 2};
    comb.global_bandwidth = 1.0;
    Vector z = y;
    z(2) = x(2);  // equal coordinates outside the local domain: both parts agree
    CHECK(k_eval(comb, x, z) == doctest::Approx(k_eval(ker, x, z)));
    CHECK(k_eval(comb, x, x) == doctest::Approx(1.0));
  }
}

TEST_CASE("kernel derivatives") {
  CoordinateKernel ker;
  ker.domain = {0};
  ker.bandwidth = 1.0;
  Vector x(1), y(1);
  x << 1.0;
  y << 0.0;
  CHECK(k_grad_first(ker, x, x, 0) == doctest::Approx(0.0));
  CHECK(k_grad_first(ker, x, y, 0) == doctest::Approx(-2.0 * std::exp(-1.0)));
  CHECK(k_cross_second(ker, x, x, 0) == doctest::Approx(2.0));
  CHECK(k_cross_second(ker, x, y, 0) == doctest::Approx(-2.0 * std::exp(-1.0)));
  CHECK_THROWS_AS(k_grad_first(ker, x, y, 5), std::invalid_argument);
}

TEST_CASE("derivatives match finite differences") {
  RngStream rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    CoordinateKernel ker;
    ker.domain = {0, 2, 3};
    ker.bandwidth = 0.5 + rng.uniform();
    if (rep % 2 == 1) {
      ker.alpha = 0.3 + 0.4 * rng.uniform();
      ker.global_domain = {0, 1, 2, 3, 4};
      ker.global_bandwidth = 0.5 + rng.uniform();
    }
    Vector x(5), y(5);
    for (int i = 0; i < 5; ++i) {
      x(i) = rng.normal();
      y(i) = rng.normal();
    }
    for (int i : ker.domain) {
      CHECK(std::abs(k_grad_first(ker, x, y, i) - fd_k_grad(ker, x, y, i)) < 1e-6);
      CHECK(std::abs(k_cross_second(ker, x, y, i) - fd_k_cross(ker, x, y, i)) < 1e-4);
    }
  }
}

TEST_CASE("kernel symmetry and locality") {
  RngStream rng(11);
  CoordinateKernel ker;
  ker.domain = {1, 3};
  ker.bandwidth = 0.8;
  Vector x(5), y(5);
  for (int i = 0; i < 5; ++i) {
    x(i) = rng.normal();
    y(i) = rng.normal();
  }
  CHECK(k_eval(ker, x, y) == doctest::Approx(k_eval(ker, y, x)));
  // d/dx_i k(x,y) = -(d/dy_i k at swapped arguments)
  CHECK(k_grad_first(ker, x, y, 1) == doctest::Approx(-k_grad_first(ker, y, x, 1)));

  Vector x2 = x, y2 = y;
  x2(0) += 5.0;
  y2(4) -= 3.0;  // outside the domain
  CHECK(k_eval(ker, x2, y2) == k_eval(ker, x, y));
  CHECK(k_grad_first(ker, x2, y2, 1) == k_grad_first(ker, x, y, 1));
  CHECK(k_cross_second(ker, x2, y2, 3) == k_cross_second(ker, x, y, 3));
}

TEST_CASE("gram matrices are positive semidefinite") {
  RngStream rng(13);
  for (int n : {10, 50}) {
    Matrix particles(n, 4);
    for (int l = 0; l < n; ++l)
      for (int j = 0; j < 4; ++j) particles(l, j) = rng.normal();
    CoordinateKernel ker;
    ker.domain = {0, 1, 2};
    ker.bandwidth = median_bandwidth(particles, 1e-8);
    Matrix gram(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        gram(a, b) = k_eval(ker, particles.row(a).transpose(), particles.row(b).transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}
