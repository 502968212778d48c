#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

namespace gsvgd {

// row l = particle l
using ParticleSet = Eigen::MatrixXd;

enum class Algorithm { VanillaSvgd, GraphicalSvgd, Langevin };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::VanillaSvgd: return "vanilla";
    case Algorithm::GraphicalSvgd: return "graphical";
    case Algorithm::Langevin: return "langevin";
  }
  return "unknown";
}

// Thrown when a step produces a non-finite value.
class EngineAbort : public std::runtime_error {
 public:
  EngineAbort(long iteration, Eigen::Index particle, const std::string &what_arg)
      : std::runtime_error("iteration " + std::to_string(iteration) + ", particle " +
                           std::to_string(particle) + ": " + what_arg),
        iteration(iteration),
        particle(particle) {}
  long iteration;
  Eigen::Index particle;
};

// Per-entry AdaGrad accumulator state.
struct OptimizerState {
  double master_step = 0.1;
  Matrix accumulator;  // summed squared direction entries, n x d
  double fudge = 1e-6;
};

struct ClipBox {
  Vector lo, hi;  // empty = no clipping
  bool active() const { return lo.size() > 0; }
};

struct EngineConfig {
  Algorithm algorithm = Algorithm::GraphicalSvgd;
  KernelSpec kernel;  // SVGD algorithms only
  long iterations = 500;
  double master_step = 0.1;
  std::uint64_t seed = 0;
  int particle_count = 50;   // used when no initial particles are supplied
  bool use_adagrad = true;   // false = plain fixed-step updates
  double adagrad_fudge = 1e-6;
  ClipBox clip;
  long checkpoint_every = 0;  // 0 = no intermediate snapshots
};

struct CheckpointLog {
  long iteration = 0;
  double wall_seconds = 0.0;        // cumulative since run start
  double mean_abs_direction = 0.0;  // plateau indicator; 0 for Langevin
  std::vector<double> bandwidths;   // per coordinate; empty for Langevin
};

struct RunLog {
  std::string algorithm;
  std::string kernel_variant;
  std::uint64_t seed = 0;
  long iterations = 0;
  Eigen::Index n = 0;
  int dim = 0;
  std::string init = "gaussian";
  double total_seconds = 0.0;
  std::vector<CheckpointLog> checkpoints;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["algorithm"] = algorithm;
    j["kernel_variant"] = kernel_variant;
    j["seed"] = seed;
    j["iterations"] = iterations;
    j["n"] = n;
    j["dim"] = dim;
    j["init"] = init;
    j["total_seconds"] = total_seconds;
    j["checkpoints"] = nlohmann::json::array();
    for (const auto &c : checkpoints)
      j["checkpoints"].push_back({{"iteration", c.iteration},
                                  {"wall_seconds", c.wall_seconds},
                                  {"mean_abs_direction", c.mean_abs_direction},
                                  {"bandwidths", c.bandwidths}});
    return j;
  }
};

struct RunResult {
  ParticleSet final;
  std::vector<ParticleSet> checkpoints;  // snapshots at checkpoint iterations
  RunLog log;
};

namespace detail {

// Plain element access into the particle matrix.
struct PlainReader {
  const ParticleSet &m;
  double operator()(Eigen::Index l, int j) const { return m(l, j); }
};

// Records which columns are read; the active set is swapped per coordinate.
struct RecordingReader {
  const ParticleSet &m;
  std::set<int> *columns = nullptr;
  double operator()(Eigen::Index l, int j) const {
    if (columns) columns->insert(j);
    return m(l, j);
  }
};

template <class Reader>
Matrix gather(const Reader &read, Eigen::Index n, const std::vector<int> &cols) {
  Matrix out(n, static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index l = 0; l < n; ++l)
    for (std::size_t t = 0; t < cols.size(); ++t)
      out(l, static_cast<Eigen::Index>(t)) = read(l, cols[t]);
  return out;
}

// s_i(x^l) through a reader; touches only potentials whose scope contains i.
template <class Reader>
double gathered_score(const GraphicalModel &model, const Reader &read, Eigen::Index l,
                      int i) {
  double total = 0.0;
  Vector sub;
  for (const auto &inc : model.incident(i)) {
    const auto &p = model.potentials()[static_cast<std::size_t>(inc.potential)];
    sub.resize(static_cast<Eigen::Index>(p.scope.size()));
    for (std::size_t t = 0; t < p.scope.size(); ++t)
      sub(static_cast<Eigen::Index>(t)) = read(l, p.scope[t]);
    total += p.grad(sub)(inc.pos);
  }
  return total;
}

// Graphical SVGD direction, Eq.-(8)-style V-average over particles:
// dir(m, i) = (1/n) sum_l [ s_i(x^l) k_i + d k_i / d x_i^l ] with all reads
// going through `read` so the same code path serves the access audit.
template <class Reader>
Matrix graphical_direction_impl(Eigen::Index n, const GraphicalModel &model,
                                const std::vector<CoordinateKernel> &kernels,
                                const Reader &read,
                                const std::function<void(int)> &on_coordinate) {
  const int d = model.dim();
  if (kernels.size() != static_cast<std::size_t>(d))
    throw std::invalid_argument("graphical_direction: need one kernel per coordinate");
  Matrix dir(n, d);
  Vector scores(n);
  for (int i = 0; i < d; ++i) {
    if (on_coordinate) on_coordinate(i);
    const auto &ker = kernels[static_cast<std::size_t>(i)];
    if (!std::binary_search(ker.domain.begin(), ker.domain.end(), i))
      throw std::invalid_argument("graphical_direction: kernel domain must contain its coordinate");
    for (Eigen::Index l = 0; l < n; ++l) {
      scores(l) = gathered_score(model, read, l, i);
      if (!std::isfinite(scores(l)))
        throw EngineAbort(-1, l, "non-finite score in graphical direction");
    }
    // domain sub-matrix; for combined kernels also the full rows
    const auto sub = gather(read, n, ker.domain);
    Matrix full;
    if (ker.combined()) full = gather(read, n, ker.global_domain);
    const int pi = static_cast<int>(
        std::lower_bound(ker.domain.begin(), ker.domain.end(), i) - ker.domain.begin());
    const double inv_h = 1.0 / ker.bandwidth;
    for (Eigen::Index m = 0; m < n; ++m) {
      double acc = 0.0;
      for (Eigen::Index l = 0; l < n; ++l) {
        const double sq = (sub.row(l) - sub.row(m)).squaredNorm();
        const double diff = sub(l, pi) - sub(m, pi);
        double k = std::exp(-sq * inv_h);
        double dk = -2.0 * inv_h * diff * k;
        if (ker.combined()) {
          const double gsq = (full.row(l) - full.row(m)).squaredNorm();
          const double gk = std::exp(-gsq / ker.global_bandwidth);
          k = ker.alpha * k + (1.0 - ker.alpha) * gk;
          dk = ker.alpha * dk +
               (1.0 - ker.alpha) * (-2.0 / ker.global_bandwidth * diff * gk);
        }
        acc += scores(l) * k + dk;
      }
      dir(m, i) = acc / static_cast<double>(n);
    }
  }
  return dir;
}

}  // namespace detail

// Vanilla SVGD direction with a single shared global kernel,
// phi(x^m) = (1/n) sum_l [ grad log p(x^l) k(x^l, x^m) + grad_{x^l} k ].
inline Matrix svgd_direction_vanilla(const ParticleSet &particles,
                                     const GraphicalModel &model,
                                     const CoordinateKernel &kernel) {
  const Eigen::Index n = particles.rows();
  const int d = model.dim();
  if (kernel.combined() || kernel.domain.size() != static_cast<std::size_t>(d))
    throw std::invalid_argument("svgd_direction_vanilla: kernel must be a pure global RBF");
  Matrix scores(n, d);
  for (Eigen::Index l = 0; l < n; ++l) {
    scores.row(l) = model.score(particles.row(l).transpose()).transpose();
    if (!scores.row(l).allFinite())
      throw EngineAbort(-1, l, "non-finite score in vanilla direction");
  }
  const Vector sq = particles.rowwise().squaredNorm();
  Matrix gram = particles * particles.transpose();
  gram = ((-(sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * gram)) /
          kernel.bandwidth)
             .array()
             .exp()
             .matrix();
  const Vector colsum = gram.colwise().sum().transpose();
  // K' S  - (2/h) (K' X - diag(colsum) X), K symmetric
  Matrix dir = gram * scores -
               (2.0 / kernel.bandwidth) * (gram * particles - colsum.asDiagonal() * particles);
  dir /= static_cast<double>(n);
  return dir;
}

// Graphical SVGD direction (one kernel per coordinate); reads only columns in
// D_i united with C_i for coordinate i.
inline Matrix graphical_direction(const ParticleSet &particles, const GraphicalModel &model,
                                  const std::vector<CoordinateKernel> &kernels) {
  return detail::graphical_direction_impl(particles.rows(), model, kernels,
                                          detail::PlainReader{particles}, nullptr);
}

// accumulator += direction^2; particles += eps * direction / (sqrt(acc) + fudge);
// then project into the clip box if one is configured.
inline void adagrad_step(ParticleSet &particles, const Matrix &direction,
                         OptimizerState &state, const ClipBox *clip = nullptr) {
  if (state.accumulator.size() == 0)
    state.accumulator = Matrix::Zero(particles.rows(), particles.cols());
  state.accumulator.array() += direction.array().square();
  particles.array() += state.master_step * direction.array() /
                       (state.accumulator.array().sqrt() + state.fudge);
  if (clip && clip->active()) {
    particles = particles.cwiseMax(clip->lo.transpose().replicate(particles.rows(), 1))
                    .cwiseMin(clip->hi.transpose().replicate(particles.rows(), 1));
  }
}

// Unadjusted Langevin: x += (eps/2) grad log p(x) + sqrt(eps) xi. Noise is
// drawn per particle (ascending), per coordinate (ascending).
inline void langevin_step(ParticleSet &particles, const GraphicalModel &model, double eps,
                          RngStream &rng) {
  const Eigen::Index n = particles.rows();
  const int d = model.dim();
  Matrix noise(n, d);
  for (Eigen::Index l = 0; l < n; ++l)
    for (int j = 0; j < d; ++j) noise(l, j) = rng.normal();
  const double root = std::sqrt(eps);
  for (Eigen::Index l = 0; l < n; ++l) {
    const Vector g = model.score(particles.row(l).transpose());
    particles.row(l) += (0.5 * eps) * g.transpose() + root * noise.row(l);
  }
}

namespace detail {

inline void check_finite(const ParticleSet &particles, long iteration) {
  if (particles.allFinite()) return;
  for (Eigen::Index l = 0; l < particles.rows(); ++l)
    if (!particles.row(l).allFinite())
      throw EngineAbort(iteration, l, "non-finite particle after step");
}

inline std::vector<double> kernel_bandwidths(const std::vector<CoordinateKernel> &kernels) {
  std::vector<double> h;
  h.reserve(kernels.size());
  for (const auto &k : kernels) h.push_back(k.bandwidth);
  return h;
}

}  // namespace detail

// Runs `iterations` steps of the configured algorithm. Bandwidths (and random
// subset domains) are recomputed from the current particles every iteration.
// RNG draw order per run: initialization (if drawn), then per iteration the
// kernel subset draws followed by Langevin noise. Same seed + config gives a
// bit-identical trajectory.
inline RunResult run(const GraphicalModel &model, const EngineConfig &config,
                     const ParticleSet *initial = nullptr) {
  if (config.iterations < 0) throw std::invalid_argument("run: iterations must be >= 0");
  if (config.master_step <= 0) throw std::invalid_argument("run: master_step must be positive");
  const int d = model.dim();
  RngStream rng(config.seed);
  RunResult result;
  if (initial) {
    if (initial->cols() != d) throw std::invalid_argument("run: initial particles have wrong dim");
    result.final = *initial;
    result.log.init = "explicit";
  } else {
    result.final.resize(config.particle_count, d);
    for (Eigen::Index l = 0; l < result.final.rows(); ++l)
      for (int j = 0; j < d; ++j) result.final(l, j) = rng.normal();
    result.log.init = "gaussian";
  }
  if (result.final.rows() < 1) throw std::invalid_argument("run: need at least one particle");

  result.log.algorithm = algorithm_name(config.algorithm);
  result.log.kernel_variant =
      config.algorithm == Algorithm::Langevin ? "" : kernel_variant_name(config.kernel);
  result.log.seed = config.seed;
  result.log.iterations = config.iterations;
  result.log.n = result.final.rows();
  result.log.dim = d;

  OptimizerState state;
  state.master_step = config.master_step;
  state.fudge = config.adagrad_fudge;

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  for (long t = 1; t <= config.iterations; ++t) {
    double mean_abs = 0.0;
    std::vector<double> bandwidths;
    try {
    switch (config.algorithm) {
      case Algorithm::VanillaSvgd: {
        KernelSpec spec = config.kernel;
        spec.variant = KernelVariant::Global;
        const auto kernels = coordinate_kernels(spec, model, result.final, rng);
        const Matrix dir = svgd_direction_vanilla(result.final, model, kernels.front());
        mean_abs = dir.cwiseAbs().mean();
        bandwidths = {kernels.front().bandwidth};
        if (config.use_adagrad)
          adagrad_step(result.final, dir, state, &config.clip);
        else
          result.final += config.master_step * dir;
        break;
      }
      case Algorithm::GraphicalSvgd: {
        const auto kernels = coordinate_kernels(config.kernel, model, result.final, rng);
        const Matrix dir = graphical_direction(result.final, model, kernels);
        mean_abs = dir.cwiseAbs().mean();
        bandwidths = detail::kernel_bandwidths(kernels);
        if (config.use_adagrad)
          adagrad_step(result.final, dir, state, &config.clip);
        else
          result.final += config.master_step * dir;
        break;
      }
      case Algorithm::Langevin:
        langevin_step(result.final, model, config.master_step, rng);
        break;
    }
    } catch (const EngineAbort &e) {
      throw EngineAbort(t, e.particle, "non-finite score");
    }
    if (config.clip.active() && config.algorithm == Algorithm::Langevin) {
      result.final =
          result.final.cwiseMax(config.clip.lo.transpose().replicate(result.final.rows(), 1))
              .cwiseMin(config.clip.hi.transpose().replicate(result.final.rows(), 1));
    }
    if (!config.use_adagrad && config.clip.active() &&
        config.algorithm != Algorithm::Langevin) {
      result.final =
          result.final.cwiseMax(config.clip.lo.transpose().replicate(result.final.rows(), 1))
              .cwiseMin(config.clip.hi.transpose().replicate(result.final.rows(), 1));
    }
    detail::check_finite(result.final, t);
    if (config.checkpoint_every > 0 && t % config.checkpoint_every == 0) {
      result.checkpoints.push_back(result.final);
      result.log.checkpoints.push_back({t, elapsed(), mean_abs, bandwidths});
    }
  }
  result.log.total_seconds = elapsed();
  return result;
}

// Result of auditing one step's particle-matrix reads.
struct AuditReport {
  bool pass = true;
  std::vector<std::vector<int>> read_columns;     // per coordinate
  std::vector<std::vector<int>> allowed_columns;  // D_i united with C_i
  std::vector<int> violations;                    // coordinates with out-of-set reads
};

// Runs one step of the configured algorithm with every particle-matrix read
// recorded, and checks reads stay inside D_i united with C_i per coordinate
// (C_i alone for Langevin). Kernel construction is part of the audited step.
inline AuditReport blanket_access_audit(const GraphicalModel &model,
                                        const EngineConfig &config) {
  const int d = model.dim();
  RngStream rng(config.seed);
  ParticleSet particles(config.particle_count, d);
  for (Eigen::Index l = 0; l < particles.rows(); ++l)
    for (int j = 0; j < d; ++j) particles(l, j) = rng.normal();

  AuditReport report;
  report.read_columns.resize(static_cast<std::size_t>(d));
  report.allowed_columns.resize(static_cast<std::size_t>(d));

  std::vector<std::set<int>> reads(static_cast<std::size_t>(d));
  detail::RecordingReader reader{particles, nullptr};

  if (config.algorithm == Algorithm::Langevin) {
    for (int i = 0; i < d; ++i) {
      reader.columns = &reads[static_cast<std::size_t>(i)];
      for (Eigen::Index l = 0; l < particles.rows(); ++l)
        detail::gathered_score(model, reader, l, i);
      const auto &allowed = model.closed_blanket(i);
      report.allowed_columns[static_cast<std::size_t>(i)] = allowed;
    }
  } else {
    // audited kernel construction: bandwidth medians read the same columns
    // the kernel will read
    KernelSpec spec = config.kernel;
    if (config.algorithm == Algorithm::VanillaSvgd) spec.variant = KernelVariant::Global;
    const auto kernels = coordinate_kernels(spec, model, particles, rng);
    for (int i = 0; i < d; ++i) {
      const auto &ker = kernels[static_cast<std::size_t>(i)];
      reader.columns = &reads[static_cast<std::size_t>(i)];
      const std::vector<int> read_domain = ker.read_domain();
      detail::gather(reader, particles.rows(), read_domain);  // median inputs
      std::set<int> allowed(read_domain.begin(), read_domain.end());
      for (int j : model.closed_blanket(i)) allowed.insert(j);
      report.allowed_columns[static_cast<std::size_t>(i)] = {allowed.begin(), allowed.end()};
    }
    detail::graphical_direction_impl(
        particles.rows(), model, kernels, reader,
        [&](int i) { reader.columns = &reads[static_cast<std::size_t>(i)]; });
  }

  for (int i = 0; i < d; ++i) {
    auto &rec = reads[static_cast<std::size_t>(i)];
    report.read_columns[static_cast<std::size_t>(i)] = {rec.begin(), rec.end()};
    const auto &allowed = report.allowed_columns[static_cast<std::size_t>(i)];
    const bool ok = std::includes(allowed.begin(), allowed.end(),
                                  report.read_columns[static_cast<std::size_t>(i)].begin(),
                                  report.read_columns[static_cast<std::size_t>(i)].end());
    if (!ok) {
      report.pass = false;
      report.violations.push_back(i);
    }
  }
  return report;
}

}  // namespace gsvgd
