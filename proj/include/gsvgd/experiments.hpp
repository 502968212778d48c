#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsvgd/config.hpp"
#include "gsvgd/crowdsourcing.hpp"
#include "gsvgd/diagnostics.hpp"
#include "gsvgd/engine.hpp"
#include "gsvgd/gaussian_mrf.hpp"
#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"
#include "gsvgd/sensor.hpp"

namespace gsvgd {

inline const char *kLibraryVersion = "0.1.0";

// One (algorithm, kernel) pair to run, e.g. graphical:local.
struct AlgoSpec {
  enum class Kind { Vanilla, Graphical, Langevin, Exact };
  Kind kind = Kind::Graphical;
  KernelSpec kernel;
  std::optional<double> step_override;  // per-algorithm master step

  std::string algorithm_label() const {
    switch (kind) {
      case Kind::Vanilla: return "vanilla";
      case Kind::Graphical: return "graphical";
      case Kind::Langevin: return "langevin";
      case Kind::Exact: return "exact";
    }
    return "unknown";
  }
  std::string kernel_label() const {
    if (kind == Kind::Langevin || kind == Kind::Exact) return "";
    return kernel_variant_name(kernel);
  }
};

// Parses "vanilla:global", "graphical:random5", "langevin:none:0.001", "exact".
inline AlgoSpec parse_algo_spec(const std::string &text, const KernelSpec &base,
                                int config_line = 0) {
  AlgoSpec spec;
  spec.kernel = base;
  std::vector<std::string> tok;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      tok.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  tok.push_back(cur);
  const std::string &alg = tok[0];
  if (alg == "vanilla") {
    spec.kind = AlgoSpec::Kind::Vanilla;
    spec.kernel.variant = KernelVariant::Global;
  } else if (alg == "graphical") {
    spec.kind = AlgoSpec::Kind::Graphical;
    spec.kernel.variant = KernelVariant::Local;
  } else if (alg == "langevin") {
    spec.kind = AlgoSpec::Kind::Langevin;
  } else if (alg == "exact") {
    spec.kind = AlgoSpec::Kind::Exact;
  } else {
    throw ConfigError(config_line, "unknown algorithm '" + alg + "'");
  }
  if (tok.size() > 1 && !tok[1].empty() && tok[1] != "none") {
    const std::string &k = tok[1];
    if (k == "global") {
      spec.kernel.variant = KernelVariant::Global;
    } else if (k == "local") {
      spec.kernel.variant = KernelVariant::Local;
    } else if (k.rfind("random", 0) == 0) {
      spec.kernel.variant = KernelVariant::RandomSubset;
      if (k.size() > 6) spec.kernel.subset_size = std::stoi(k.substr(6));
    } else if (k.rfind("combined", 0) == 0) {
      spec.kernel.variant = KernelVariant::Combined;
      if (k.size() > 8) spec.kernel.subset_size = std::stoi(k.substr(8));
    } else {
      throw ConfigError(config_line, "unknown kernel variant '" + k + "'");
    }
  }
  if (tok.size() > 2 && !tok[2].empty()) {
    try {
      spec.step_override = std::stod(tok[2]);
    } catch (...) {
      throw ConfigError(config_line, "bad step override '" + tok[2] + "'");
    }
  }
  return spec;
}

enum class InitKind { Gaussian, TruthJitter, MeanLabelJitter };

struct ExperimentConfig {
  std::string experiment;  // iso-gaussian | gaussian-grid | sparsity-sweep |
                           // gaussian-dense | sensor | crowdsourcing
  std::vector<AlgoSpec> algorithms;
  std::vector<long> particle_counts{50};
  long trials = 10;
  std::uint64_t seed = 0;
  long iterations = 400;
  double master_step = 0.1;
  long checkpoint_every = 0;
  bool use_adagrad = true;
  InitKind init = InitKind::Gaussian;
  double init_jitter = 1.0;

  // iso-gaussian
  std::vector<long> dims{100};
  // gaussian-grid
  int grid_rows = 10, grid_cols = 10;
  // sparsity-sweep
  std::vector<double> radii{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  // gaussian-dense
  int dense_dim = 50;
  // sensor
  int sensor_count = 100;
  std::string sensor_layout = "random";  // random | fig4
  double sensor_sigma = 0.05, sensor_cutoff = 0.5;
  bool dump_particles = true;
  // crowdsourcing
  int cs_items = 80, cs_workers = 40, cs_controls = 10;
  CrowdsourcingHyper hyper;
  double eta_clip = 3.0;

  // ground-truth pools
  long mmd_pool = 10000;            // exact-sample pool for Gaussian targets; 0 = skip
  long langevin_pool_size = 0;      // non-Gaussian posterior pool; 0 = skip
  long langevin_pool_steps = 50000;
  double langevin_pool_step = 1e-3;

  std::string out_dir = ".";
};

inline ExperimentConfig parse_experiment_config(const ConfigFile &file) {
  ExperimentConfig cfg;
  cfg.experiment = file.require_string("experiment.name");
  cfg.seed = file.get_u64("experiment.seed", 0);
  cfg.trials = file.get_long("experiment.trials", 10);
  if (cfg.trials < 1)
    throw ConfigError(file.line_of("experiment.trials"), "trials must be >= 1");
  cfg.out_dir = file.get_string("experiment.out", ".");
  cfg.particle_counts = file.get_long_csv("experiment.particles", cfg.particle_counts);
  cfg.iterations = file.get_long("engine.iterations", cfg.iterations);
  cfg.master_step = file.get_double("engine.master_step", cfg.master_step);
  cfg.checkpoint_every = file.get_long("engine.checkpoint_every", 0);
  cfg.use_adagrad = file.get_string("engine.adagrad", "true") != "false";
  const std::string init = file.get_string("engine.init", "");
  if (init == "truth") cfg.init = InitKind::TruthJitter;
  if (init == "mean-label") cfg.init = InitKind::MeanLabelJitter;
  cfg.init_jitter = file.get_double("engine.init_jitter", 1.0);

  KernelSpec base;
  base.bandwidth_floor = file.get_double("kernel.floor", 1e-8);
  base.alpha = file.get_double("kernel.alpha", 0.5);
  const std::string bw = file.get_string("kernel.bandwidth", "median");
  if (bw.rfind("fixed:", 0) == 0) {
    base.bandwidth_rule = BandwidthRule::Fixed;
    base.fixed_bandwidth = std::stod(bw.substr(6));
  } else if (bw != "median") {
    throw ConfigError(file.line_of("kernel.bandwidth"), "bandwidth must be 'median' or 'fixed:H'");
  }
  for (const auto &s : file.get_list("algorithms.run"))
    cfg.algorithms.push_back(parse_algo_spec(s, base, file.line_of("algorithms.run")));
  if (cfg.algorithms.empty())
    throw ConfigError(0, "config declares no algorithms (need [algorithms] run = ...)");

  cfg.dims = file.get_long_csv("iso.dims", cfg.dims);
  cfg.grid_rows = static_cast<int>(file.get_long("grid.rows", cfg.grid_rows));
  cfg.grid_cols = static_cast<int>(file.get_long("grid.cols", cfg.grid_cols));
  cfg.radii = file.get_double_csv("sparsity.radii", cfg.radii);
  cfg.dense_dim = static_cast<int>(file.get_long("dense.dim", cfg.dense_dim));
  cfg.sensor_count = static_cast<int>(file.get_long("sensor.count", cfg.sensor_count));
  cfg.sensor_layout = file.get_string("sensor.layout", cfg.sensor_layout);
  cfg.sensor_sigma = file.get_double("sensor.sigma", cfg.sensor_sigma);
  cfg.sensor_cutoff = file.get_double("sensor.cutoff", cfg.sensor_cutoff);
  cfg.dump_particles = file.get_string("sensor.dump_particles", "true") != "false";
  cfg.cs_items = static_cast<int>(file.get_long("crowdsourcing.items", cfg.cs_items));
  cfg.cs_workers = static_cast<int>(file.get_long("crowdsourcing.workers", cfg.cs_workers));
  cfg.cs_controls = static_cast<int>(file.get_long("crowdsourcing.controls", cfg.cs_controls));
  cfg.hyper.sigma_x = file.get_double("crowdsourcing.sigma_x", cfg.hyper.sigma_x);
  cfg.hyper.sigma_b = file.get_double("crowdsourcing.sigma_b", cfg.hyper.sigma_b);
  cfg.hyper.alpha = file.get_double("crowdsourcing.alpha", cfg.hyper.alpha);
  cfg.hyper.beta = file.get_double("crowdsourcing.beta", cfg.hyper.beta);
  cfg.eta_clip = file.get_double("crowdsourcing.eta_clip", cfg.eta_clip);
  cfg.mmd_pool = file.get_long("pools.mmd_pool", cfg.mmd_pool);
  cfg.langevin_pool_size = file.get_long("pools.langevin_pool_size", cfg.langevin_pool_size);
  cfg.langevin_pool_steps = file.get_long("pools.langevin_pool_steps", cfg.langevin_pool_steps);
  cfg.langevin_pool_step = file.get_double("pools.langevin_pool_step", cfg.langevin_pool_step);

  const std::vector<std::string> known = {"iso-gaussian", "gaussian-grid", "sparsity-sweep",
                                          "gaussian-dense", "sensor", "crowdsourcing"};
  if (std::find(known.begin(), known.end(), cfg.experiment) == known.end())
    throw ConfigError(file.line_of("experiment.name"),
                      "unknown experiment '" + cfg.experiment + "'");
  return cfg;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig &cfg) {
  nlohmann::json j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["trials"] = cfg.trials;
  j["iterations"] = cfg.iterations;
  j["master_step"] = cfg.master_step;
  j["adagrad"] = cfg.use_adagrad;
  j["particle_counts"] = cfg.particle_counts;
  nlohmann::json algs = nlohmann::json::array();
  for (const auto &a : cfg.algorithms) {
    nlohmann::json e;
    e["algorithm"] = a.algorithm_label();
    e["kernel"] = a.kernel_label();
    if (a.step_override) e["step"] = *a.step_override;
    algs.push_back(e);
  }
  j["algorithms"] = algs;
  j["dims"] = cfg.dims;
  j["grid"] = {cfg.grid_rows, cfg.grid_cols};
  j["radii"] = cfg.radii;
  j["dense_dim"] = cfg.dense_dim;
  j["sensor"] = {{"count", cfg.sensor_count},
                 {"layout", cfg.sensor_layout},
                 {"sigma", cfg.sensor_sigma},
                 {"cutoff", cfg.sensor_cutoff}};
  j["crowdsourcing"] = {{"items", cfg.cs_items},
                        {"workers", cfg.cs_workers},
                        {"controls", cfg.cs_controls},
                        {"sigma_x", cfg.hyper.sigma_x},
                        {"sigma_b", cfg.hyper.sigma_b},
                        {"alpha", cfg.hyper.alpha},
                        {"beta", cfg.hyper.beta}};
  j["pools"] = {{"mmd_pool", cfg.mmd_pool},
                {"langevin_pool_size", cfg.langevin_pool_size},
                {"langevin_pool_steps", cfg.langevin_pool_steps},
                {"langevin_pool_step", cfg.langevin_pool_step}};
  j["out"] = cfg.out_dir;
  return j;
}

// Side table written next to results.csv.
struct SideTable {
  std::string filename;
  std::string header;
  std::vector<std::string> rows;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<SideTable> tables;
  std::vector<std::pair<std::string, nlohmann::json>> json_dumps;
};

namespace detail {

// Seed schedule: everything a trial does derives from derive_seed(master,
// trial); stage indices below keep sub-streams apart. Runs at the same
// (trial, n) share one engine seed across algorithms so paired comparisons
// start from identical particles.
inline std::uint64_t trial_seed(const ExperimentConfig &cfg, long trial) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(trial));
}
inline std::uint64_t stage_seed(std::uint64_t tseed, long stage) {
  return derive_seed(tseed, static_cast<std::uint64_t>(stage));
}

inline EngineConfig engine_config(const ExperimentConfig &cfg, const AlgoSpec &alg,
                                  long n, std::uint64_t engine_seed) {
  EngineConfig ec;
  ec.kernel = alg.kernel;
  ec.iterations = cfg.iterations;
  ec.master_step = alg.step_override.value_or(cfg.master_step);
  ec.seed = engine_seed;
  ec.particle_count = static_cast<int>(n);
  ec.use_adagrad = cfg.use_adagrad;
  ec.checkpoint_every = cfg.checkpoint_every;
  switch (alg.kind) {
    case AlgoSpec::Kind::Vanilla: ec.algorithm = Algorithm::VanillaSvgd; break;
    case AlgoSpec::Kind::Graphical: ec.algorithm = Algorithm::GraphicalSvgd; break;
    case AlgoSpec::Kind::Langevin: ec.algorithm = Algorithm::Langevin; break;
    case AlgoSpec::Kind::Exact:
      throw std::invalid_argument("engine_config: exact baseline has no engine run");
  }
  return ec;
}

// per-coordinate population variance, averaged over coordinates
inline double mean_variance(const Matrix &particles) {
  const Vector mean = particles.colwise().mean().transpose();
  const Vector second = particles.array().square().matrix().colwise().mean().transpose();
  return (second - mean.cwiseProduct(mean)).mean();
}

inline double ksd2_local(const Matrix &particles, const GraphicalModel &model) {
  KernelSpec spec;
  spec.variant = KernelVariant::Local;
  RngStream rng(0);  // Local kernels draw nothing
  const auto kernels = coordinate_kernels(spec, model, particles, rng);
  return ksd_squared(particles, model, kernels, StatisticKind::V).total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gaussian-target experiments
// ---------------------------------------------------------------------------

struct GaussianCell {
  long trial;
  std::uint64_t seed;
  std::string algorithm, kernel;
  long n;
  double mse_mean, mse_second, ksd2;
  std::optional<double> mmd2;
  double variance;  // particle variance estimate, mean over coordinates
};

namespace detail {

// Shared driver for all Gaussian MRF targets: runs every (algorithm, n) cell
// of one trial against a fixed (model, params).
inline std::vector<GaussianCell> gaussian_trial(const ExperimentConfig &cfg, long trial,
                                                const GraphicalModel &model,
                                                const GaussianMrfParams &params,
                                                long stage_base) {
  const std::uint64_t tseed = trial_seed(cfg, trial);
  auto [true_mean, cov] = gaussian_exact_moments(params);
  const Vector true_second = cov.diagonal() + true_mean.cwiseProduct(true_mean);
  Matrix pool;
  if (cfg.mmd_pool > 0) {
    RngStream pool_rng(stage_seed(tseed, stage_base + 1));
    pool = gaussian_exact_sample(params, cfg.mmd_pool, pool_rng);
  }
  std::vector<GaussianCell> cells;
  for (long n : cfg.particle_counts) {
    const std::uint64_t engine_seed = stage_seed(tseed, stage_base + 100 + 7919 * n);
    for (const auto &alg : cfg.algorithms) {
      Matrix final_particles;
      if (alg.kind == AlgoSpec::Kind::Exact) {
        RngStream rng(engine_seed);
        final_particles = gaussian_exact_sample(params, n, rng);
      } else {
        const EngineConfig ec = engine_config(cfg, alg, n, engine_seed);
        final_particles = run(model, ec).final;
      }
      GaussianCell cell;
      cell.trial = trial;
      cell.seed = tseed;
      cell.algorithm = alg.algorithm_label();
      cell.kernel = alg.kernel_label();
      cell.n = n;
      std::tie(cell.mse_mean, cell.mse_second) =
          moment_errors(final_particles, true_mean, true_second);
      cell.ksd2 = ksd2_local(final_particles, model);
      if (pool.rows() > 0) cell.mmd2 = mmd_squared(final_particles, pool);
      cell.variance = mean_variance(final_particles);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline ResultRow cell_to_row(const ExperimentConfig &cfg, const GaussianCell &c) {
  ResultRow row;
  row.iteration = cfg.iterations;
  row.n = c.n;
  row.algorithm = c.algorithm;
  row.kernel_variant = c.kernel;
  row.seed = c.seed;
  row.trial = c.trial;
  row.mse_mean = c.mse_mean;
  row.mse_second = c.mse_second;
  row.mmd2 = c.mmd2;
  row.ksd2 = c.ksd2;
  return row;
}

}  // namespace detail

struct IsoGaussianResult {
  ExperimentResult output;
  struct Cell {
    long d;
    GaussianCell inner;
  };
  std::vector<Cell> cells;
};

// Variance-estimation study on N(0, I_d) across dimensions.
inline IsoGaussianResult run_iso_gaussian(const ExperimentConfig &cfg) {
  IsoGaussianResult result;
  SideTable var_table{"variance.csv",
                      "d,n,algorithm,kernel_variant,seed,trial,variance", {}};
  for (long d : cfg.dims) {
    auto [model, params] = standard_gaussian(static_cast<int>(d));
    for (long trial = 0; trial < cfg.trials; ++trial) {
      const auto cells =
          detail::gaussian_trial(cfg, trial, model, params, /*stage_base=*/10 * d);
      for (const auto &c : cells) {
        result.output.rows.push_back(detail::cell_to_row(cfg, c));
        var_table.rows.push_back(std::to_string(d) + "," + std::to_string(c.n) + "," +
                                 c.algorithm + "," + c.kernel + "," +
                                 std::to_string(c.seed) + "," + std::to_string(c.trial) +
                                 "," + format_double(c.variance));
        result.cells.push_back({d, c});
      }
    }
  }
  result.output.tables.push_back(std::move(var_table));
  return result;
}

struct GaussianGridResult {
  ExperimentResult output;
  std::vector<GaussianCell> cells;
};

// 4-neighborhood grid MRF; model parameters are redrawn per trial.
inline GaussianGridResult run_gaussian_grid(const ExperimentConfig &cfg) {
  GaussianGridResult result;
  const auto edges = grid_graph(cfg.grid_rows, cfg.grid_cols);
  const int d = cfg.grid_rows * cfg.grid_cols;
  for (long trial = 0; trial < cfg.trials; ++trial) {
    RngStream model_rng(detail::stage_seed(detail::trial_seed(cfg, trial), 0));
    auto [model, params] = build_gaussian_mrf(edges, d, model_rng);
    const auto cells = detail::gaussian_trial(cfg, trial, model, params, 0);
    for (const auto &c : cells) {
      result.output.rows.push_back(detail::cell_to_row(cfg, c));
      result.cells.push_back(c);
    }
  }
  return result;
}

struct SparsityCell {
  double radius;
  long edges;
  GaussianCell inner;
};

struct SparsityResult {
  ExperimentResult output;
  std::vector<SparsityCell> cells;
};

// Radius graphs over the unit grid; MMD of graphical vs vanilla as density grows.
inline SparsityResult run_sparsity_sweep(const ExperimentConfig &cfg) {
  SparsityResult result;
  const auto points = unit_grid_points(cfg.grid_rows, cfg.grid_cols);
  const int d = static_cast<int>(points.size());
  SideTable table{"sparsity.csv",
                  "radius,edges,n,algorithm,kernel_variant,seed,trial,mmd2", {}};
  for (long trial = 0; trial < cfg.trials; ++trial) {
    for (std::size_t ri = 0; ri < cfg.radii.size(); ++ri) {
      const double r = cfg.radii[ri];
      const auto edges = radius_graph(points, r);
      RngStream model_rng(
          detail::stage_seed(detail::trial_seed(cfg, trial), 1000 + static_cast<long>(ri)));
      auto [model, params] = build_gaussian_mrf(edges, d, model_rng);
      const auto cells = detail::gaussian_trial(cfg, trial, model, params,
                                                2000 + 100000 * static_cast<long>(ri));
      for (const auto &c : cells) {
        table.rows.push_back(format_double(r) + "," + std::to_string(edges.size()) + "," +
                             std::to_string(c.n) + "," + c.algorithm + "," + c.kernel +
                             "," + std::to_string(c.seed) + "," + std::to_string(c.trial) +
                             "," + (c.mmd2 ? format_double(*c.mmd2) : std::string()));
        result.cells.push_back({r, static_cast<long>(edges.size()), c});
      }
    }
  }
  result.output.tables.push_back(std::move(table));
  return result;
}

// Fully connected Gaussian MRF; exercises random-subset and combined kernels.
inline GaussianGridResult run_gaussian_dense(const ExperimentConfig &cfg) {
  GaussianGridResult result;
  std::vector<Edge> edges;
  for (int i = 0; i < cfg.dense_dim; ++i)
    for (int j = i + 1; j < cfg.dense_dim; ++j) edges.emplace_back(i, j);
  for (long trial = 0; trial < cfg.trials; ++trial) {
    RngStream model_rng(detail::stage_seed(detail::trial_seed(cfg, trial), 0));
    auto [model, params] = build_gaussian_mrf(edges, cfg.dense_dim, model_rng);
    const auto cells = detail::gaussian_trial(cfg, trial, model, params, 0);
    for (const auto &c : cells) {
      result.output.rows.push_back(detail::cell_to_row(cfg, c));
      result.cells.push_back(c);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sensor localization
// ---------------------------------------------------------------------------

struct SensorCell {
  long trial;
  std::uint64_t seed;
  std::string algorithm, kernel;
  long n;
  double rmse;
  std::optional<double> mse_mean, mse_second, mmd2, ksd2;
  // fig4 layout only: fraction of the ambiguous sensor's particles on each
  // side of the midpoint between the two hypothesized modes
  std::optional<double> frac_pos, frac_neg;
};

struct SensorResult {
  ExperimentResult output;
  std::vector<SensorCell> cells;
};

namespace detail {

inline ParticleSet replicate_with_jitter(const Vector &base, long n, double jitter,
                                         RngStream &rng) {
  ParticleSet out(n, base.size());
  for (Eigen::Index l = 0; l < n; ++l)
    for (Eigen::Index j = 0; j < base.size(); ++j)
      out(l, j) = base(j) + jitter * rng.normal();
  return out;
}

// Long unadjusted-Langevin pool as ground truth for non-Gaussian posteriors,
// initialized at the supplied truth point.
inline Matrix langevin_pool(const GraphicalModel &model, const Vector &truth,
                            const ExperimentConfig &cfg, std::uint64_t seed,
                            const ClipBox *clip = nullptr) {
  EngineConfig ec;
  ec.algorithm = Algorithm::Langevin;
  ec.iterations = cfg.langevin_pool_steps;
  ec.master_step = cfg.langevin_pool_step;
  ec.seed = seed;
  if (clip) ec.clip = *clip;
  RngStream init_rng(derive_seed(seed, 1));
  const ParticleSet init =
      replicate_with_jitter(truth, cfg.langevin_pool_size, 0.0, init_rng);
  return run(model, ec, &init).final;
}

}  // namespace detail

inline SensorResult run_sensor(const ExperimentConfig &cfg) {
  SensorResult result;
  SideTable bimodal{"bimodality.csv",
                    "n,algorithm,kernel_variant,seed,trial,frac_pos,frac_neg", {}};
  const bool fig4 = cfg.sensor_layout == "fig4";
  for (long trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t tseed = detail::trial_seed(cfg, trial);
    RngStream inst_rng(detail::stage_seed(tseed, 0));
    AmbiguousSensorLayout layout;
    std::pair<GraphicalModel, SensorInstance> built =
        fig4 ? (layout = ambiguous_sensor_layout(),
                build_sensor_model(layout.anchors, layout.truth, cfg.sensor_sigma,
                                   cfg.sensor_cutoff, inst_rng))
             : random_sensor_instance(cfg.sensor_count, cfg.sensor_sigma,
                                      cfg.sensor_cutoff, inst_rng);
    const GraphicalModel &model = built.first;
    const SensorInstance &inst = built.second;

    Vector truth_flat(2 * inst.truth.size());
    for (std::size_t s = 0; s < inst.truth.size(); ++s) {
      truth_flat(static_cast<Eigen::Index>(2 * s)) = inst.truth[s].x();
      truth_flat(static_cast<Eigen::Index>(2 * s + 1)) = inst.truth[s].y();
    }

    Matrix pool;
    Vector pool_mean, pool_second;
    if (cfg.langevin_pool_size > 0) {
      pool = detail::langevin_pool(model, truth_flat, cfg, detail::stage_seed(tseed, 1));
      pool_mean = pool.colwise().mean().transpose();
      pool_second = pool.array().square().matrix().colwise().mean().transpose();
    }

    for (long n : cfg.particle_counts) {
      const std::uint64_t engine_seed = detail::stage_seed(tseed, 100 + 7919 * n);
      std::optional<ParticleSet> init;
      if (cfg.init == InitKind::TruthJitter) {
        RngStream init_rng(detail::stage_seed(tseed, 50 + n));
        init = detail::replicate_with_jitter(truth_flat, n, cfg.init_jitter, init_rng);
      }
      for (const auto &alg : cfg.algorithms) {
        if (alg.kind == AlgoSpec::Kind::Exact)
          throw std::invalid_argument("run_sensor: no exact baseline for this posterior");
        const EngineConfig ec = detail::engine_config(cfg, alg, n, engine_seed);
        const RunResult rr = run(model, ec, init ? &*init : nullptr);

        SensorCell cell;
        cell.trial = trial;
        cell.seed = tseed;
        cell.algorithm = alg.algorithm_label();
        cell.kernel = alg.kernel_label();
        cell.n = n;
        cell.rmse = localization_rmse(rr.final, inst.truth);
        cell.ksd2 = detail::ksd2_local(rr.final, model);
        if (pool.rows() > 0) {
          std::tie(cell.mse_mean, cell.mse_second) =
              moment_errors(rr.final, pool_mean, pool_second);
          cell.mmd2 = mmd_squared(rr.final, pool);
        }
        if (fig4) {
          // hypothesized modes: intersections of the two measured anchor circles
          const SensorInstance::AnchorMeasurement *la = nullptr, *lb = nullptr;
          for (const auto &m : inst.links) {
            if (m.s != layout.ambiguous_sensor) continue;
            if (m.a == layout.anchor_a) la = &m;
            if (m.a == layout.anchor_b) lb = &m;
          }
          if (la && lb) {
            const auto [mode1, mode2] =
                circle_intersections(layout.anchors[static_cast<std::size_t>(la->a)], la->r,
                                     layout.anchors[static_cast<std::size_t>(lb->a)], lb->r);
            const Eigen::Vector2d axis = mode1 - mode2;
            const Eigen::Vector2d mid = 0.5 * (mode1 + mode2);
            long pos = 0;
            const int sx = 2 * layout.ambiguous_sensor;
            for (Eigen::Index l = 0; l < rr.final.rows(); ++l) {
              const Eigen::Vector2d p(rr.final(l, sx), rr.final(l, sx + 1));
              if ((p - mid).dot(axis) > 0) ++pos;
            }
            cell.frac_pos = static_cast<double>(pos) / static_cast<double>(rr.final.rows());
            cell.frac_neg = 1.0 - *cell.frac_pos;
            bimodal.rows.push_back(std::to_string(n) + "," + cell.algorithm + "," +
                                   cell.kernel + "," + std::to_string(tseed) + "," +
                                   std::to_string(trial) + "," +
                                   format_double(*cell.frac_pos) + "," +
                                   format_double(*cell.frac_neg));
          }
        }
        if (cfg.dump_particles) {
          nlohmann::json dump;
          dump["instance"] = inst.to_json();
          dump["algorithm"] = cell.algorithm;
          dump["kernel_variant"] = cell.kernel;
          dump["n"] = n;
          dump["trial"] = trial;
          dump["seed"] = tseed;
          nlohmann::json pts = nlohmann::json::array();
          for (Eigen::Index l = 0; l < rr.final.rows(); ++l) {
            std::vector<double> row(rr.final.cols());
            for (Eigen::Index j = 0; j < rr.final.cols(); ++j) row[j] = rr.final(l, j);
            pts.push_back(row);
          }
          dump["particles"] = pts;
          result.output.json_dumps.emplace_back(
              "particles_sensor_t" + std::to_string(trial) + "_" + cell.algorithm +
                  (cell.kernel.empty() ? "" : "_" + cell.kernel) + "_n" + std::to_string(n) +
                  ".json",
              std::move(dump));
        }

        ResultRow row;
        row.iteration = cfg.iterations;
        row.n = n;
        row.algorithm = cell.algorithm;
        row.kernel_variant = cell.kernel;
        row.seed = tseed;
        row.trial = trial;
        row.mse_mean = cell.mse_mean;
        row.mse_second = cell.mse_second;
        row.mmd2 = cell.mmd2;
        row.ksd2 = cell.ksd2;
        row.rmse = cell.rmse;
        result.output.rows.push_back(row);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  if (fig4) result.output.tables.push_back(std::move(bimodal));
  return result;
}

// ---------------------------------------------------------------------------
// Crowdsourcing
// ---------------------------------------------------------------------------

struct CrowdsourcingCell {
  long trial;
  std::uint64_t seed;
  std::string algorithm, kernel;
  long n;
  double label_mse;  // posterior-mean x vs true x over free items
  std::optional<double> mse_mean, mse_second, mmd2, ksd2;
};

struct CrowdsourcingResult {
  ExperimentResult output;
  std::vector<CrowdsourcingCell> cells;
};

inline CrowdsourcingResult run_crowdsourcing(const ExperimentConfig &cfg) {
  CrowdsourcingResult result;
  SideTable labels{"labels.csv", "n,algorithm,kernel_variant,seed,trial,label_mse", {}};
  for (long trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t tseed = detail::trial_seed(cfg, trial);
    RngStream data_rng(detail::stage_seed(tseed, 0));
    const CrowdsourcingData data = generate_crowdsourcing_data(
        cfg.cs_items, cfg.cs_workers, cfg.cs_controls, cfg.hyper, data_rng);
    auto [model, layout] = build_crowdsourcing_model(data, cfg.hyper);

    ClipBox clip;
    clip.lo = Vector::Constant(layout.dim, -std::numeric_limits<double>::infinity());
    clip.hi = Vector::Constant(layout.dim, std::numeric_limits<double>::infinity());
    for (int j = 0; j < data.num_workers; ++j) {
      clip.lo(layout.eta_coord(j)) = -cfg.eta_clip;
      clip.hi(layout.eta_coord(j)) = cfg.eta_clip;
    }

    // truth point in theta coordinates, used for the pool initialization
    Vector truth_theta = Vector::Zero(layout.dim);
    for (std::size_t t = 0; t < layout.free_items.size(); ++t)
      truth_theta(static_cast<Eigen::Index>(t)) = data.true_x(layout.free_items[t]);
    for (int j = 0; j < data.num_workers; ++j) {
      truth_theta(layout.b_coord(j)) = data.true_b(j);
      truth_theta(layout.eta_coord(j)) =
          std::clamp(data.true_log_nu(j), -cfg.eta_clip, cfg.eta_clip);
    }

    Matrix pool;
    Vector pool_mean, pool_second;
    if (cfg.langevin_pool_size > 0) {
      pool = detail::langevin_pool(model, truth_theta, cfg, detail::stage_seed(tseed, 1),
                                   &clip);
      pool_mean = pool.colwise().mean().transpose();
      pool_second = pool.array().square().matrix().colwise().mean().transpose();
    }

    // init center: mean label per free item, zero bias, zero log-variance
    Vector center = Vector::Zero(layout.dim);
    const Vector item_means = mean_labels(data);
    for (std::size_t t = 0; t < layout.free_items.size(); ++t)
      center(static_cast<Eigen::Index>(t)) = item_means(layout.free_items[t]);

    for (long n : cfg.particle_counts) {
      const std::uint64_t engine_seed = detail::stage_seed(tseed, 100 + 7919 * n);
      std::optional<ParticleSet> init;
      if (cfg.init == InitKind::MeanLabelJitter || cfg.init == InitKind::TruthJitter) {
        RngStream init_rng(detail::stage_seed(tseed, 50 + n));
        const Vector &base = cfg.init == InitKind::TruthJitter ? truth_theta : center;
        ParticleSet p = detail::replicate_with_jitter(base, n, cfg.init_jitter, init_rng);
        p = p.cwiseMax(clip.lo.transpose().replicate(p.rows(), 1))
                .cwiseMin(clip.hi.transpose().replicate(p.rows(), 1));
        init = std::move(p);
      }
      for (const auto &alg : cfg.algorithms) {
        if (alg.kind == AlgoSpec::Kind::Exact)
          throw std::invalid_argument("run_crowdsourcing: no exact baseline");
        EngineConfig ec = detail::engine_config(cfg, alg, n, engine_seed);
        ec.clip = clip;
        const RunResult rr = run(model, ec, init ? &*init : nullptr);

        CrowdsourcingCell cell;
        cell.trial = trial;
        cell.seed = tseed;
        cell.algorithm = alg.algorithm_label();
        cell.kernel = alg.kernel_label();
        cell.n = n;
        double mse = 0.0;
        for (std::size_t t = 0; t < layout.free_items.size(); ++t) {
          const double est = rr.final.col(static_cast<Eigen::Index>(t)).mean();
          const double diff = est - data.true_x(layout.free_items[t]);
          mse += diff * diff;
        }
        cell.label_mse = mse / static_cast<double>(layout.free_items.size());
        cell.ksd2 = detail::ksd2_local(rr.final, model);
        if (pool.rows() > 0) {
          std::tie(cell.mse_mean, cell.mse_second) =
              moment_errors(rr.final, pool_mean, pool_second);
          cell.mmd2 = mmd_squared(rr.final, pool);
        }
        labels.rows.push_back(std::to_string(n) + "," + cell.algorithm + "," + cell.kernel +
                              "," + std::to_string(tseed) + "," + std::to_string(trial) +
                              "," + format_double(cell.label_mse));

        ResultRow row;
        row.iteration = cfg.iterations;
        row.n = n;
        row.algorithm = cell.algorithm;
        row.kernel_variant = cell.kernel;
        row.seed = tseed;
        row.trial = trial;
        row.mse_mean = cell.mse_mean;
        row.mse_second = cell.mse_second;
        row.mmd2 = cell.mmd2;
        row.ksd2 = cell.ksd2;
        result.output.rows.push_back(row);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  result.output.tables.push_back(std::move(labels));
  return result;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string iso8601_utc_now() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs the configured experiment and writes results.csv, side tables, JSON
// dumps and the run manifest into cfg.out_dir. Returns rows written.
inline long run_experiment(const ExperimentConfig &cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started_at = iso8601_utc_now();
  ExperimentResult out;
  if (cfg.experiment == "iso-gaussian") {
    out = run_iso_gaussian(cfg).output;
  } else if (cfg.experiment == "gaussian-grid") {
    out = run_gaussian_grid(cfg).output;
  } else if (cfg.experiment == "sparsity-sweep") {
    out = run_sparsity_sweep(cfg).output;
  } else if (cfg.experiment == "gaussian-dense") {
    out = run_gaussian_dense(cfg).output;
  } else if (cfg.experiment == "sensor") {
    out = run_sensor(cfg).output;
  } else if (cfg.experiment == "crowdsourcing") {
    out = run_crowdsourcing(cfg).output;
  } else {
    throw std::invalid_argument("run_experiment: unknown experiment '" + cfg.experiment + "'");
  }

  std::filesystem::create_directories(cfg.out_dir);
  long rows_written = 0;
  if (!out.rows.empty()) {
    std::ofstream csv(std::filesystem::path(cfg.out_dir) / "results.csv");
    csv << csv_header() << "\n";
    for (const auto &row : out.rows) {
      csv << to_csv(row) << "\n";
      ++rows_written;
    }
  }
  for (const auto &table : out.tables) {
    std::ofstream csv(std::filesystem::path(cfg.out_dir) / table.filename);
    csv << table.header << "\n";
    for (const auto &row : table.rows) {
      csv << row << "\n";
      ++rows_written;
    }
  }
  for (const auto &[name, blob] : out.json_dumps) {
    std::ofstream js(std::filesystem::path(cfg.out_dir) / name);
    js << blob.dump(2) << "\n";
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::json manifest;
  manifest["config"] = experiment_config_to_json(cfg);
  manifest["versions"] = {{"gsvgd", kLibraryVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION)}};
  manifest["started_at"] = started_at;
  manifest["wall_seconds"] = wall;
  manifest["rows_written"] = rows_written;
  manifest["over_budget"] = wall > 300.0;  // desk-scale soft budget, 5 minutes
  std::ofstream mf(std::filesystem::path(cfg.out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
  return rows_written;
}

}  // namespace gsvgd
