#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

namespace gsvgd {

struct CrowdsourcingHyper {
  double sigma_x = 5.0;
  double sigma_b = 5.0;
  double alpha = 3.0;  // Inv-Gamma shape on the worker variance
  double beta = 1.0;   // Inv-Gamma scale
};

// Assignment graph plus labels. Control items have known answers and their x
// is data, not a variable.
struct CrowdsourcingData {
  int num_items = 0;
  int num_workers = 0;
  std::vector<std::pair<int, int>> assignments;  // (item, worker)
  std::vector<double> labels;                    // r_ij, aligned with assignments
  std::vector<int> control_items;                // sorted item ids
  std::vector<double> control_values;            // known x for control items

  // synthetic ground truth, filled by the generator
  Vector true_x, true_b, true_log_nu;
};

// Coordinate layout of the posterior over theta = [x_free, b, eta] with
// eta_j = log nu_j.
struct CrowdsourcingLayout {
  std::vector<int> free_items;     // item ids owning an x coordinate, sorted
  std::vector<int> item_to_coord;  // item id -> x coordinate, -1 for controls
  int b_offset = 0;                // b_j at b_offset + j
  int eta_offset = 0;              // eta_j at eta_offset + j
  int dim = 0;

  int x_coord(int item) const { return item_to_coord.at(item); }
  int b_coord(int j) const { return b_offset + j; }
  int eta_coord(int j) const { return eta_offset + j; }
};

// Posterior of the bias-variance worker model: labels r_ij = x_i + b_j +
// sqrt(nu_j) eps, Gaussian priors on x (free items only) and b, Inv-Gamma on
// nu reparametrized through eta = log nu with the Jacobian folded in, giving
// the prior term -alpha eta - beta exp(-eta) and likelihood terms
// -eta/2 - (r - x - b)^2 / (2 exp(eta)).
inline std::pair<GraphicalModel, CrowdsourcingLayout> build_crowdsourcing_model(
    const CrowdsourcingData &data, const CrowdsourcingHyper &hyper) {
  if (hyper.sigma_x <= 0 || hyper.sigma_b <= 0 || hyper.alpha <= 0 || hyper.beta <= 0)
    throw std::invalid_argument("build_crowdsourcing_model: hyperparameters must be positive");
  std::vector<int> per_worker(data.num_workers, 0);
  for (const auto &[i, j] : data.assignments) {
    if (i < 0 || i >= data.num_items || j < 0 || j >= data.num_workers)
      throw std::invalid_argument("build_crowdsourcing_model: assignment out of range");
    ++per_worker[j];
  }
  for (int j = 0; j < data.num_workers; ++j)
    if (per_worker[j] == 0)
      throw std::invalid_argument("build_crowdsourcing_model: worker with zero assignments");

  CrowdsourcingLayout layout;
  layout.item_to_coord.assign(data.num_items, -1);
  const std::set<int> controls(data.control_items.begin(), data.control_items.end());
  for (int i = 0; i < data.num_items; ++i) {
    if (controls.count(i)) continue;
    layout.item_to_coord[i] = static_cast<int>(layout.free_items.size());
    layout.free_items.push_back(i);
  }
  const int nf = static_cast<int>(layout.free_items.size());
  layout.b_offset = nf;
  layout.eta_offset = nf + data.num_workers;
  layout.dim = nf + 2 * data.num_workers;

  std::vector<CliquePotential> pots;
  const double vx = hyper.sigma_x * hyper.sigma_x;
  const double vb = hyper.sigma_b * hyper.sigma_b;
  for (int t = 0; t < nf; ++t)
    pots.push_back({{t},
                    [vx](const Vector &x) { return -x(0) * x(0) / (2.0 * vx); },
                    [vx](const Vector &x) {
                      Vector g(1);
                      g(0) = -x(0) / vx;
                      return g;
                    }});
  for (int j = 0; j < data.num_workers; ++j) {
    pots.push_back({{layout.b_coord(j)},
                    [vb](const Vector &x) { return -x(0) * x(0) / (2.0 * vb); },
                    [vb](const Vector &x) {
                      Vector g(1);
                      g(0) = -x(0) / vb;
                      return g;
                    }});
    const double a = hyper.alpha, be = hyper.beta;
    pots.push_back({{layout.eta_coord(j)},
                    [a, be](const Vector &x) { return -a * x(0) - be * std::exp(-x(0)); },
                    [a, be](const Vector &x) {
                      Vector g(1);
                      g(0) = -a + be * std::exp(-x(0));
                      return g;
                    }});
  }
  for (std::size_t t = 0; t < data.assignments.size(); ++t) {
    const auto [i, j] = data.assignments[t];
    const double r = data.labels.at(t);
    const int bc = layout.b_coord(j);
    const int ec = layout.eta_coord(j);
    if (layout.item_to_coord[i] >= 0) {
      const int xc = layout.item_to_coord[i];
      pots.push_back({{xc, bc, ec},
                      [r](const Vector &v) {
                        const double resid = r - v(0) - v(1);
                        return -0.5 * v(2) - resid * resid / (2.0 * std::exp(v(2)));
                      },
                      [r](const Vector &v) {
                        const double inv = std::exp(-v(2));
                        const double resid = r - v(0) - v(1);
                        Vector g(3);
                        g(0) = resid * inv;
                        g(1) = resid * inv;
                        g(2) = -0.5 + 0.5 * resid * resid * inv;
                        return g;
                      }});
    } else {
      const auto it = std::lower_bound(data.control_items.begin(),
                                       data.control_items.end(), i);
      const double known = data.control_values.at(
          static_cast<std::size_t>(it - data.control_items.begin()));
      const double resid0 = r - known;
      pots.push_back({{bc, ec},
                      [resid0](const Vector &v) {
                        const double resid = resid0 - v(0);
                        return -0.5 * v(1) - resid * resid / (2.0 * std::exp(v(1)));
                      },
                      [resid0](const Vector &v) {
                        const double inv = std::exp(-v(1));
                        const double resid = resid0 - v(0);
                        Vector g(2);
                        g(0) = resid * inv;
                        g(1) = -0.5 + 0.5 * resid * resid * inv;
                        return g;
                      }});
    }
  }
  return {GraphicalModel(layout.dim, std::move(pots)), std::move(layout)};
}

// Synthetic data from the generative model itself. Draw order: x over items,
// b over workers, nu over workers, then per item the worker count and worker
// subset, then labels in assignment order, then the control subset. Every
// worker ends up with at least `min_per_worker` assignments (fix-up pass
// adds items to underloaded workers).
inline CrowdsourcingData generate_crowdsourcing_data(int num_items, int num_workers,
                                                     int num_controls,
                                                     const CrowdsourcingHyper &hyper,
                                                     RngStream &rng,
                                                     int min_per_worker = 3) {
  if (num_items <= 0 || num_workers <= 0 || num_controls < 0 || num_controls > num_items)
    throw std::invalid_argument("generate_crowdsourcing_data: bad sizes");
  CrowdsourcingData data;
  data.num_items = num_items;
  data.num_workers = num_workers;
  data.true_x.resize(num_items);
  for (int i = 0; i < num_items; ++i) data.true_x(i) = hyper.sigma_x * rng.normal();
  data.true_b.resize(num_workers);
  for (int j = 0; j < num_workers; ++j) data.true_b(j) = hyper.sigma_b * rng.normal();
  data.true_log_nu.resize(num_workers);
  for (int j = 0; j < num_workers; ++j)
    data.true_log_nu(j) = std::log(rng.inv_gamma(hyper.alpha, hyper.beta));

  std::vector<std::set<int>> workers_of_item(num_items);
  std::vector<int> load(num_workers, 0);
  std::vector<int> all_workers(num_workers);
  for (int j = 0; j < num_workers; ++j) all_workers[j] = j;
  for (int i = 0; i < num_items; ++i) {
    const int k = 1 + static_cast<int>(rng.below(5));  // 1..5 workers per item
    for (int j : rng.sample_without_replacement(all_workers, std::min(k, num_workers))) {
      workers_of_item[i].insert(j);
      ++load[j];
    }
  }
  for (int j = 0; j < num_workers; ++j) {
    while (load[j] < min_per_worker) {
      // prefer items below the 5-worker cap that don't already have j
      std::vector<int> candidates;
      for (int i = 0; i < num_items; ++i)
        if (!workers_of_item[i].count(j) && workers_of_item[i].size() < 5)
          candidates.push_back(i);
      if (candidates.empty())
        for (int i = 0; i < num_items; ++i)
          if (!workers_of_item[i].count(j)) candidates.push_back(i);
      if (candidates.empty())
        throw std::invalid_argument("generate_crowdsourcing_data: cannot satisfy min_per_worker");
      const int i = candidates[rng.below(candidates.size())];
      workers_of_item[i].insert(j);
      ++load[j];
    }
  }
  for (int i = 0; i < num_items; ++i)
    for (int j : workers_of_item[i]) data.assignments.emplace_back(i, j);
  data.labels.reserve(data.assignments.size());
  for (const auto &[i, j] : data.assignments)
    data.labels.push_back(data.true_x(i) + data.true_b(j) +
                          std::exp(0.5 * data.true_log_nu(j)) * rng.normal());

  std::vector<int> items(num_items);
  for (int i = 0; i < num_items; ++i) items[i] = i;
  data.control_items = rng.sample_without_replacement(items, num_controls);
  std::sort(data.control_items.begin(), data.control_items.end());
  for (int i : data.control_items) data.control_values.push_back(data.true_x(i));
  return data;
}

// Mean label per item; used as the default particle initialization center.
inline Vector mean_labels(const CrowdsourcingData &data) {
  Vector sum = Vector::Zero(data.num_items);
  Vector count = Vector::Zero(data.num_items);
  for (std::size_t t = 0; t < data.assignments.size(); ++t) {
    sum(data.assignments[t].first) += data.labels[t];
    count(data.assignments[t].first) += 1.0;
  }
  return sum.cwiseQuotient(count.cwiseMax(1.0));
}

}  // namespace gsvgd
