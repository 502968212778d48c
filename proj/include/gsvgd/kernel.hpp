#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

namespace gsvgd {

// k(u, v) = exp(-||u - v||^2 / h)
template <class DerivedA, class DerivedB>
double rbf_eval(const Eigen::MatrixBase<DerivedA> &u,
                const Eigen::MatrixBase<DerivedB> &v, double h) {
  if (h <= 0) throw std::invalid_argument("rbf_eval: bandwidth must be positive");
  if (u.size() != v.size()) throw std::invalid_argument("rbf_eval: length mismatch");
  return std::exp(-(u - v).squaredNorm() / h);
}

// Median trick: h = max(med^2, floor) where med is the lower median of the
// n(n-1)/2 pairwise Euclidean distances between the rows of `points`.
inline double median_bandwidth(const Matrix &points, double floor_value) {
  if (points.rows() < 1) throw std::invalid_argument("median_bandwidth: no points");
  if (floor_value <= 0) throw std::invalid_argument("median_bandwidth: floor must be positive");
  const Eigen::Index n = points.rows();
  if (n < 2) return floor_value;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dists.push_back((points.row(i) - points.row(j)).norm());
  const std::size_t mid = (dists.size() - 1) / 2;  // lower median for even counts
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                   dists.end());
  const double med = dists[mid];
  return std::max(med * med, floor_value);
}

enum class KernelVariant { Global, Local, RandomSubset, Combined };
enum class BandwidthRule { MedianTrick, Fixed };

// How the per-coordinate kernels are built each iteration.
struct KernelSpec {
  KernelVariant variant = KernelVariant::Local;
  BandwidthRule bandwidth_rule = BandwidthRule::MedianTrick;
  double fixed_bandwidth = 1.0;
  double bandwidth_floor = 1e-8;
  int subset_size = 5;    // domain size for RandomSubset (node + neighbors)
  double alpha = 0.5;     // Combined: weight on the local/subset part
  // Combined mixes this variant with a global RBF part.
  KernelVariant combined_with = KernelVariant::RandomSubset;
};

// An RBF kernel owned by one coordinate, restricted to `domain`. Combined
// kernels add a global RBF part with weight (1 - alpha); pure kernels have
// alpha = 1 and no global part.
struct CoordinateKernel {
  std::vector<int> domain;  // sorted, contains the owning coordinate
  double bandwidth = 1.0;
  double alpha = 1.0;
  std::vector<int> global_domain;  // all coordinates, only when alpha < 1
  double global_bandwidth = 1.0;

  bool combined() const { return alpha < 1.0; }
  // every coordinate this kernel may read
  std::vector<int> read_domain() const {
    if (!combined()) return domain;
    return global_domain;  // global part already spans everything
  }
};

namespace detail {

inline std::vector<int> all_coords(int d) {
  std::vector<int> v(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

inline Matrix gather_columns(const Matrix &particles, const std::vector<int> &cols) {
  Matrix out(particles.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t t = 0; t < cols.size(); ++t)
    out.col(static_cast<Eigen::Index>(t)) = particles.col(cols[t]);
  return out;
}

inline double spec_bandwidth(const KernelSpec &spec, const Matrix &sub_particles) {
  return spec.bandwidth_rule == BandwidthRule::Fixed
             ? spec.fixed_bandwidth
             : median_bandwidth(sub_particles, spec.bandwidth_floor);
}

// domain of a RandomSubset kernel: {i} plus subset_size - 1 nodes drawn
// uniformly without replacement from N_i (all of N_i when smaller)
inline std::vector<int> subset_domain(const KernelSpec &spec, const GraphicalModel &model,
                                      int i, RngStream &rng) {
  const auto &nb = model.markov_blanket(i);
  const std::size_t want = static_cast<std::size_t>(std::max(0, spec.subset_size - 1));
  std::vector<int> domain;
  if (nb.size() <= want) {
    domain = nb;
  } else {
    domain = rng.sample_without_replacement(nb, want);
  }
  domain.push_back(i);
  std::sort(domain.begin(), domain.end());
  return domain;
}

}  // namespace detail

// One kernel per coordinate, bandwidths from the current particles. Random
// subsets are redrawn on every call (coordinate index ascending), so calling
// this once per iteration matches the redraw-per-iteration rule.
inline std::vector<CoordinateKernel> coordinate_kernels(const KernelSpec &spec,
                                                        const GraphicalModel &model,
                                                        const Matrix &particles,
                                                        RngStream &rng) {
  if (particles.rows() < 1)
    throw std::invalid_argument("coordinate_kernels: empty particle set");
  const int d = model.dim();
  std::vector<CoordinateKernel> out(static_cast<std::size_t>(d));
  const std::vector<int> everything = detail::all_coords(d);
  double global_h = 0.0;
  if (spec.variant == KernelVariant::Global || spec.variant == KernelVariant::Combined)
    global_h = detail::spec_bandwidth(spec, particles);
  for (int i = 0; i < d; ++i) {
    CoordinateKernel ker;
    switch (spec.variant) {
      case KernelVariant::Global:
        ker.domain = everything;
        ker.bandwidth = global_h;
        break;
      case KernelVariant::Local:
        ker.domain = model.closed_blanket(i);
        ker.bandwidth = detail::spec_bandwidth(
            spec, detail::gather_columns(particles, ker.domain));
        break;
      case KernelVariant::RandomSubset:
        ker.domain = detail::subset_domain(spec, model, i, rng);
        ker.bandwidth = detail::spec_bandwidth(
            spec, detail::gather_columns(particles, ker.domain));
        break;
      case KernelVariant::Combined: {
        if (spec.alpha < 0.0 || spec.alpha > 1.0)
          throw std::invalid_argument("coordinate_kernels: alpha must be in [0,1]");
        ker.domain = spec.combined_with == KernelVariant::Local
                         ? model.closed_blanket(i)
                         : detail::subset_domain(spec, model, i, rng);
        ker.bandwidth = detail::spec_bandwidth(
            spec, detail::gather_columns(particles, ker.domain));
        ker.alpha = spec.alpha;
        ker.global_domain = everything;
        ker.global_bandwidth = global_h;
        break;
      }
    }
    out[static_cast<std::size_t>(i)] = std::move(ker);
  }
  return out;
}

namespace detail {

template <class DerivedA, class DerivedB>
double restricted_sqdist(const Eigen::MatrixBase<DerivedA> &x,
                         const Eigen::MatrixBase<DerivedB> &y,
                         const std::vector<int> &domain) {
  double s = 0.0;
  for (int j : domain) {
    const double diff = x(j) - y(j);
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

// k_i(x, y) on full vectors; only coordinates in the domain(s) are read.
inline double k_eval(const CoordinateKernel &ker, const Vector &x, const Vector &y) {
  const double local = std::exp(-detail::restricted_sqdist(x, y, ker.domain) / ker.bandwidth);
  if (!ker.combined()) return local;
  const double global =
      std::exp(-detail::restricted_sqdist(x, y, ker.global_domain) / ker.global_bandwidth);
  return ker.alpha * local + (1.0 - ker.alpha) * global;
}

// d k_i(x, y) / d x_i
inline double k_grad_first(const CoordinateKernel &ker, const Vector &x, const Vector &y,
                           int i) {
  if (!std::binary_search(ker.domain.begin(), ker.domain.end(), i))
    throw std::invalid_argument("k_grad_first: coordinate not in kernel domain");
  const double diff = x(i) - y(i);
  const double local = std::exp(-detail::restricted_sqdist(x, y, ker.domain) / ker.bandwidth);
  double g = -(2.0 / ker.bandwidth) * diff * local;
  if (ker.combined()) {
    const double global =
        std::exp(-detail::restricted_sqdist(x, y, ker.global_domain) / ker.global_bandwidth);
    g = ker.alpha * g + (1.0 - ker.alpha) * (-(2.0 / ker.global_bandwidth) * diff * global);
  }
  return g;
}

// d^2 k_i(x, y) / d x_i d y_i
inline double k_cross_second(const CoordinateKernel &ker, const Vector &x, const Vector &y,
                             int i) {
  if (!std::binary_search(ker.domain.begin(), ker.domain.end(), i))
    throw std::invalid_argument("k_cross_second: coordinate not in kernel domain");
  const double diff = x(i) - y(i);
  auto part = [diff](double sq, double h) {
    const double k = std::exp(-sq / h);
    return (2.0 / h) * k - (4.0 / (h * h)) * diff * diff * k;
  };
  double g = part(detail::restricted_sqdist(x, y, ker.domain), ker.bandwidth);
  if (ker.combined()) {
    g = ker.alpha * g +
        (1.0 - ker.alpha) * part(detail::restricted_sqdist(x, y, ker.global_domain),
                                 ker.global_bandwidth);
  }
  return g;
}

inline std::string kernel_variant_name(const KernelSpec &spec) {
  switch (spec.variant) {
    case KernelVariant::Global: return "global";
    case KernelVariant::Local: return "local";
    case KernelVariant::RandomSubset: return "random" + std::to_string(spec.subset_size);
    case KernelVariant::Combined: return "combined" + std::to_string(spec.subset_size);
  }
  return "unknown";
}

}  // namespace gsvgd
