#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsvgd/rng.hpp"

namespace gsvgd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One additive term psi(x_s) of an unnormalized log density, with its
// gradient on the sub-vector x_s.
struct CliquePotential {
  std::vector<int> scope;                          // sorted, distinct, in [0, dim)
  std::function<double(const Vector &)> log_value; // psi(x_s)
  std::function<Vector(const Vector &)> grad;      // d psi / d x_s, length |s|
};

// Markov blanket of node i: all nodes co-appearing with i in some clique,
// minus i itself. Deterministic, sorted.
inline std::vector<int> blanket(const std::vector<CliquePotential> &potentials,
                                int dim, int i) {
  if (i < 0 || i >= dim)
    throw std::invalid_argument("blanket: node index out of range");
  std::set<int> nb;
  for (const auto &p : potentials) {
    bool contains = std::binary_search(p.scope.begin(), p.scope.end(), i);
    if (!contains) continue;
    for (int j : p.scope)
      if (j != i) nb.insert(j);
  }
  return {nb.begin(), nb.end()};
}

// A density p(x) ~ exp(sum_s psi(x_s)) together with the Markov structure
// derived from the clique scopes. Immutable after construction.
class GraphicalModel {
 public:
  GraphicalModel(int dim, std::vector<CliquePotential> potentials)
      : dim_(dim), potentials_(std::move(potentials)) {
    if (dim_ <= 0) throw std::invalid_argument("GraphicalModel: dim must be positive");
    incident_.resize(dim_);
    for (std::size_t pi = 0; pi < potentials_.size(); ++pi) {
      const auto &scope = potentials_[pi].scope;
      if (scope.empty())
        throw std::invalid_argument("GraphicalModel: empty clique scope");
      for (std::size_t t = 0; t < scope.size(); ++t) {
        const int j = scope[t];
        if (j < 0 || j >= dim_)
          throw std::invalid_argument("GraphicalModel: scope index out of range");
        if (t > 0 && scope[t - 1] >= j)
          throw std::invalid_argument("GraphicalModel: scope must be sorted and distinct");
        incident_[j].push_back({static_cast<int>(pi), static_cast<int>(t)});
      }
    }
    blankets_.resize(dim_);
    closed_blankets_.resize(dim_);
    for (int i = 0; i < dim_; ++i) {
      blankets_[i] = blanket(potentials_, dim_, i);
      closed_blankets_[i] = blankets_[i];
      closed_blankets_[i].insert(
          std::lower_bound(closed_blankets_[i].begin(), closed_blankets_[i].end(), i), i);
    }
  }

  int dim() const { return dim_; }
  const std::vector<CliquePotential> &potentials() const { return potentials_; }
  const std::vector<int> &markov_blanket(int i) const { return blankets_.at(i); }
  const std::vector<int> &closed_blanket(int i) const { return closed_blankets_.at(i); }

  // (potential index, position of node i inside that potential's scope)
  struct Incidence {
    int potential;
    int pos;
  };
  const std::vector<Incidence> &incident(int i) const { return incident_.at(i); }

  // sum_s psi(x_s), no normalizing constant
  double log_density_unnorm(const Vector &x) const {
    check_point(x);
    double total = 0.0;
    Vector sub;
    for (const auto &p : potentials_) {
      gather(x, p.scope, sub);
      total += p.log_value(sub);
    }
    return total;
  }

  // d/dx_i log p(x); touches only potentials whose scope contains i
  double score_coordinate(const Vector &x, int i) const {
    if (i < 0 || i >= dim_)
      throw std::invalid_argument("score_coordinate: index out of range");
    check_point(x);
    double total = 0.0;
    Vector sub;
    for (const auto &inc : incident_[i]) {
      const auto &p = potentials_[inc.potential];
      gather(x, p.scope, sub);
      total += p.grad(sub)(inc.pos);
    }
    return total;
  }

  // full gradient of log p; each potential evaluated once
  Vector score(const Vector &x) const {
    check_point(x);
    Vector g = Vector::Zero(dim_);
    Vector sub;
    for (const auto &p : potentials_) {
      gather(x, p.scope, sub);
      const Vector pg = p.grad(sub);
      for (std::size_t t = 0; t < p.scope.size(); ++t) g(p.scope[t]) += pg(t);
    }
    return g;
  }

  static void gather(const Vector &x, const std::vector<int> &idx, Vector &out) {
    out.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t t = 0; t < idx.size(); ++t) out(static_cast<Eigen::Index>(t)) = x(idx[t]);
  }

 private:
  void check_point(const Vector &x) const {
    if (x.size() != dim_)
      throw std::invalid_argument("GraphicalModel: point has wrong dimension");
    if (!x.allFinite())
      throw std::invalid_argument("GraphicalModel: non-finite input point");
  }

  int dim_;
  std::vector<CliquePotential> potentials_;
  std::vector<std::vector<Incidence>> incident_;
  std::vector<std::vector<int>> blankets_;
  std::vector<std::vector<int>> closed_blankets_;
};

struct GradCheckReport {
  double max_error = 0.0;    // max over trials/coordinates of the fd error,
                             // relative above 1, absolute below
  int worst_coordinate = -1;
  int trials = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences of log_density_unnorm against score at `trials`
// random N(0, I) points. Step 1e-5 * max(1, |x_i|). Error metric is
// absolute-or-relative: |fd - an| / max(1, |an|).
inline GradCheckReport check_gradients(const GraphicalModel &model, int trials,
                                       double tol, RngStream &rng) {
  GradCheckReport report;
  report.trials = trials;
  report.tolerance = tol;
  const int d = model.dim();
  for (int t = 0; t < trials; ++t) {
    Vector x(d);
    for (int j = 0; j < d; ++j) x(j) = rng.normal();
    const Vector analytic = model.score(x);
    for (int i = 0; i < d; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd =
          (model.log_density_unnorm(xp) - model.log_density_unnorm(xm)) / (2.0 * h);
      const double err = std::abs(fd - analytic(i)) / std::max(1.0, std::abs(analytic(i)));
      if (err > report.max_error) {
        report.max_error = err;
        report.worst_coordinate = i;
      }
    }
  }
  report.pass = report.max_error <= tol;
  return report;
}

}  // namespace gsvgd
