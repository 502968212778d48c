#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

namespace gsvgd {

// A 2-D range-only localization instance. Sensor s occupies coordinates
// (2s, 2s+1) of the model; anchors are constants.
struct SensorInstance {
  std::vector<Eigen::Vector2d> anchors;
  std::vector<Eigen::Vector2d> truth;  // true sensor positions
  double sigma = 0.05;
  double cutoff = 0.5;

  struct PairMeasurement {
    int i, j;  // sensor indices, i < j
    double r;
  };
  struct AnchorMeasurement {
    int s, a;  // sensor, anchor
    double r;
  };
  std::vector<PairMeasurement> pairs;
  std::vector<AnchorMeasurement> links;

  nlohmann::json to_json() const {
    nlohmann::json j;
    auto pts = [](const std::vector<Eigen::Vector2d> &v) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto &p : v) arr.push_back({p.x(), p.y()});
      return arr;
    };
    j["anchors"] = pts(anchors);
    j["truth"] = pts(truth);
    j["sigma"] = sigma;
    j["cutoff"] = cutoff;
    j["pairs"] = nlohmann::json::array();
    for (const auto &m : pairs) j["pairs"].push_back({m.i, m.j, m.r});
    j["links"] = nlohmann::json::array();
    for (const auto &m : links) j["links"].push_back({m.s, m.a, m.r});
    return j;
  }
};

namespace detail {

// -(|u| - r)^2 / (2 sigma^2) where u = p - q, and its gradient in p.
// At u = 0 the unit direction is taken to be zero, keeping updates finite.
inline double range_log_value(const Eigen::Vector2d &u, double r, double sigma) {
  const double dist = u.norm();
  const double resid = dist - r;
  return -resid * resid / (2.0 * sigma * sigma);
}

inline Eigen::Vector2d range_grad(const Eigen::Vector2d &u, double r, double sigma) {
  const double dist = u.norm();
  if (dist == 0.0) return Eigen::Vector2d::Zero();
  return (-(dist - r) / (sigma * sigma)) * (u / dist);
}

}  // namespace detail

// Builds the localization posterior over dim = 2 * |sensors|: one potential
// per measured pair, log psi = -(||x_i - x_j|| - r)^2 / (2 sigma^2). A pair
// is measured iff its true distance is below `cutoff`. Noise draws: sensor
// pairs (i < j, lexicographic) first, then sensor-anchor links (s, then a).
inline std::pair<GraphicalModel, SensorInstance> build_sensor_model(
    const std::vector<Eigen::Vector2d> &anchors,
    const std::vector<Eigen::Vector2d> &truth, double sigma, double cutoff,
    RngStream &rng) {
  if (sigma <= 0 || cutoff <= 0)
    throw std::invalid_argument("build_sensor_model: sigma and cutoff must be positive");
  SensorInstance inst;
  inst.anchors = anchors;
  inst.truth = truth;
  inst.sigma = sigma;
  inst.cutoff = cutoff;
  const int S = static_cast<int>(truth.size());
  for (int i = 0; i < S; ++i)
    for (int j = i + 1; j < S; ++j) {
      const double dist = (truth[i] - truth[j]).norm();
      if (dist < cutoff) inst.pairs.push_back({i, j, dist + sigma * rng.normal()});
    }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < static_cast<int>(anchors.size()); ++a) {
      const double dist = (truth[s] - anchors[a]).norm();
      if (dist < cutoff) inst.links.push_back({s, a, dist + sigma * rng.normal()});
    }

  std::vector<CliquePotential> pots;
  for (const auto &m : inst.pairs) {
    const double r = m.r;
    pots.push_back(
        {{2 * m.i, 2 * m.i + 1, 2 * m.j, 2 * m.j + 1},
         [r, sigma](const Vector &x) {
           return detail::range_log_value({x(0) - x(2), x(1) - x(3)}, r, sigma);
         },
         [r, sigma](const Vector &x) {
           const Eigen::Vector2d g =
               detail::range_grad({x(0) - x(2), x(1) - x(3)}, r, sigma);
           Vector out(4);
           out << g.x(), g.y(), -g.x(), -g.y();
           return out;
         }});
  }
  for (const auto &m : inst.links) {
    const double r = m.r;
    const Eigen::Vector2d anchor = anchors[m.a];
    pots.push_back({{2 * m.s, 2 * m.s + 1},
                    [r, sigma, anchor](const Vector &x) {
                      return detail::range_log_value(
                          {x(0) - anchor.x(), x(1) - anchor.y()}, r, sigma);
                    },
                    [r, sigma, anchor](const Vector &x) {
                      const Eigen::Vector2d g = detail::range_grad(
                          {x(0) - anchor.x(), x(1) - anchor.y()}, r, sigma);
                      Vector out(2);
                      out << g.x(), g.y();
                      return out;
                    }});
  }
  return {GraphicalModel(2 * S, std::move(pots)), std::move(inst)};
}

// Random instance in the paper's style: truth uniform on [-1,1]^2, anchors at
// the four corners. Truth draws: sensor ascending, x then y.
inline std::pair<GraphicalModel, SensorInstance> random_sensor_instance(
    int sensors, double sigma, double cutoff, RngStream &rng) {
  std::vector<Eigen::Vector2d> anchors = {
      {-1.0, -1.0}, {1.0, -1.0}, {-1.0, 1.0}, {1.0, 1.0}};
  std::vector<Eigen::Vector2d> truth(sensors);
  for (auto &p : truth) {
    p.x() = rng.uniform(-1.0, 1.0);
    p.y() = rng.uniform(-1.0, 1.0);
  }
  return build_sensor_model(anchors, truth, sigma, cutoff, rng);
}

// Small 3-anchor, 9-sensor network with a deliberately ambiguous sensor: the
// last sensor is measured against exactly two anchors, so its posterior has
// two mirror modes across the line joining those anchors. The other sensors
// form chains hanging off the remaining anchor.
struct AmbiguousSensorLayout {
  std::vector<Eigen::Vector2d> anchors;
  std::vector<Eigen::Vector2d> truth;
  int ambiguous_sensor = 8;
  int anchor_a = 0, anchor_b = 1;  // the two anchors the ambiguous sensor sees
};

inline AmbiguousSensorLayout ambiguous_sensor_layout() {
  AmbiguousSensorLayout layout;
  layout.anchors = {{-0.2, 0.35}, {0.2, 0.35}, {-0.75, -0.75}};
  // Chain from the third anchor plus free-floating satellites; the last
  // sensor sits above the axis joining anchors 0 and 1.
  layout.truth = {
      {-0.45, -0.55}, {-0.1, -0.35}, {0.25, -0.2}, {0.6, -0.05},
      {-0.55, -0.1},  {0.85, 0.3},   {-0.5, 0.25}, {0.05, -0.75},
      {0.0, 0.6},
  };
  layout.ambiguous_sensor = 8;
  layout.anchor_a = 0;
  layout.anchor_b = 1;
  return layout;
}

// Intersections of two circles (c0, r0), (c1, r1). For nearly tangent or
// disjoint circles the perpendicular offset is clamped to zero.
inline std::pair<Eigen::Vector2d, Eigen::Vector2d> circle_intersections(
    const Eigen::Vector2d &c0, double r0, const Eigen::Vector2d &c1, double r1) {
  const Eigen::Vector2d delta = c1 - c0;
  const double dist = delta.norm();
  if (dist == 0.0)
    throw std::invalid_argument("circle_intersections: concentric circles");
  const double a = (r0 * r0 - r1 * r1 + dist * dist) / (2.0 * dist);
  const double h2 = r0 * r0 - a * a;
  const double h = h2 > 0.0 ? std::sqrt(h2) : 0.0;
  const Eigen::Vector2d base = c0 + (a / dist) * delta;
  const Eigen::Vector2d perp(-delta.y() / dist, delta.x() / dist);
  return {base + h * perp, base - h * perp};
}

}  // namespace gsvgd
