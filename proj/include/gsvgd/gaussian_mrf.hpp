#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

namespace gsvgd {

using Edge = std::pair<int, int>;

// Natural parameters of a Gaussian MRF, log p(x) = b'x - x'Ax/2 + const.
struct GaussianMrfParams {
  Matrix A;  // symmetric positive definite precision
  Vector b;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["b"] = std::vector<double>(b.data(), b.data() + b.size());
    std::vector<double> a(A.size());
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c)
        a[static_cast<std::size_t>(r * A.cols() + c)] = A(r, c);  // row-major
    j["A"] = a;
    return j;
  }

  static GaussianMrfParams from_json(const nlohmann::json &j) {
    GaussianMrfParams p;
    const auto b = j.at("b").get<std::vector<double>>();
    const auto a = j.at("A").get<std::vector<double>>();
    const auto d = static_cast<Eigen::Index>(b.size());
    if (a.size() != static_cast<std::size_t>(d * d))
      throw std::invalid_argument("GaussianMrfParams: A size does not match b");
    p.b = Eigen::Map<const Vector>(b.data(), d);
    p.A.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c)
        p.A(r, c) = a[static_cast<std::size_t>(r * d + c)];
    return p;
  }
};

// Edges of the 4-neighborhood grid, row-major cell indexing, each undirected
// edge listed once with i < j.
inline std::vector<Edge> grid_graph(int rows, int cols) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("grid_graph: rows and cols must be >= 1");
  std::vector<Edge> edges;
  auto id = [cols](int r, int c) { return r * cols + c; };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) edges.emplace_back(id(r, c), id(r, c + 1));
      if (r + 1 < rows) edges.emplace_back(id(r, c), id(r + 1, c));
    }
  return edges;
}

// Edge (i, j), i < j, iff ||p_i - p_j|| <= r.
inline std::vector<Edge> radius_graph(const std::vector<Eigen::Vector2d> &points,
                                      double r) {
  if (r < 0) throw std::invalid_argument("radius_graph: r must be >= 0");
  std::vector<Edge> edges;
  const int n = static_cast<int>(points.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((points[i] - points[j]).norm() <= r) edges.emplace_back(i, j);
  return edges;
}

// Unit-spaced grid points, row-major, matching grid_graph indexing.
inline std::vector<Eigen::Vector2d> unit_grid_points(int rows, int cols) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) pts.emplace_back(double(c), double(r));
  return pts;
}

// Model with singleton potentials b_i x_i - A_ii x_i^2 / 2 and one pair
// potential -x_i A_ij x_j per stored edge (nonzero off-diagonal i < j), so
// that the summed log density is exactly b'x - x'Ax/2.
inline GraphicalModel gaussian_model_from_params(const GaussianMrfParams &params) {
  const int d = static_cast<int>(params.b.size());
  if (params.A.rows() != d || params.A.cols() != d)
    throw std::invalid_argument("gaussian_model_from_params: shape mismatch");
  if (!params.A.isApprox(params.A.transpose(), 1e-12))
    throw std::invalid_argument("gaussian_model_from_params: A must be symmetric");
  std::vector<CliquePotential> pots;
  for (int i = 0; i < d; ++i) {
    const double bi = params.b(i);
    const double aii = params.A(i, i);
    pots.push_back({{i},
                    [bi, aii](const Vector &x) { return bi * x(0) - 0.5 * aii * x(0) * x(0); },
                    [bi, aii](const Vector &x) {
                      Vector g(1);
                      g(0) = bi - aii * x(0);
                      return g;
                    }});
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double aij = params.A(i, j);
      if (aij == 0.0) continue;
      pots.push_back({{i, j},
                      [aij](const Vector &x) { return -aij * x(0) * x(1); },
                      [aij](const Vector &x) {
                        Vector g(2);
                        g(0) = -aij * x(1);
                        g(1) = -aij * x(0);
                        return g;
                      }});
    }
  return GraphicalModel(d, std::move(pots));
}

// Random Gaussian MRF on the given edge set: b_i ~ N(0,1), A_ij ~ U[-0.1,0.1]
// on edges, then A_ii = 0.1 + sum_j |A_ij| (diagonally dominant, hence PD).
// Draw order: b over i ascending, then edge weights in edge-list order.
inline std::pair<GraphicalModel, GaussianMrfParams> build_gaussian_mrf(
    const std::vector<Edge> &edges, int dim, RngStream &rng) {
  GaussianMrfParams params;
  params.b.resize(dim);
  for (int i = 0; i < dim; ++i) params.b(i) = rng.normal();
  params.A = Matrix::Zero(dim, dim);
  std::set<Edge> seen;
  for (const auto &[i, j] : edges) {
    if (i < 0 || i >= dim || j < 0 || j >= dim)
      throw std::invalid_argument("build_gaussian_mrf: edge index out of range");
    if (i == j) throw std::invalid_argument("build_gaussian_mrf: self-loop");
    const Edge key{std::min(i, j), std::max(i, j)};
    if (!seen.insert(key).second)
      throw std::invalid_argument("build_gaussian_mrf: duplicate edge");
    const double w = rng.uniform(-0.1, 0.1);
    params.A(key.first, key.second) = w;
    params.A(key.second, key.first) = w;
  }
  for (int i = 0; i < dim; ++i)
    params.A(i, i) = 0.1 + params.A.row(i).cwiseAbs().sum() - std::abs(params.A(i, i));
  return {gaussian_model_from_params(params), params};
}

// Standard normal N(0, I_d) as a fully factorized Gaussian MRF.
inline std::pair<GraphicalModel, GaussianMrfParams> standard_gaussian(int dim) {
  GaussianMrfParams params{Matrix::Identity(dim, dim), Vector::Zero(dim)};
  return {gaussian_model_from_params(params), params};
}

// mean = A^-1 b, cov = A^-1 via Cholesky.
inline std::pair<Vector, Matrix> gaussian_exact_moments(const GaussianMrfParams &params) {
  Eigen::LLT<Matrix> llt(params.A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gaussian_exact_moments: A is not positive definite");
  const Vector mean = llt.solve(params.b);
  const Matrix cov = llt.solve(Matrix::Identity(params.A.rows(), params.A.cols()));
  return {mean, cov};
}

// n iid draws from N(A^-1 b, A^-1), one row per draw. With A = L L', each
// draw is mean + L^-T z; z entries drawn per-sample, coordinates ascending.
inline Matrix gaussian_exact_sample(const GaussianMrfParams &params, Eigen::Index n,
                                    RngStream &rng) {
  const Eigen::Index d = params.b.size();
  Eigen::LLT<Matrix> llt(params.A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gaussian_exact_sample: A is not positive definite");
  const Vector mean = llt.solve(params.b);
  Matrix out(n, d);
  Vector z(d);
  const Matrix L = llt.matrixL();
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    out.row(s) = (mean + L.transpose().triangularView<Eigen::Upper>().solve(z)).transpose();
  }
  return out;
}

// E[x_i^2] = cov_ii + mean_i^2 per coordinate.
inline Vector gaussian_second_moments(const GaussianMrfParams &params) {
  auto [mean, cov] = gaussian_exact_moments(params);
  return cov.diagonal() + mean.cwiseProduct(mean);
}

}  // namespace gsvgd
