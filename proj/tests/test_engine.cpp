#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gsvgd/engine.hpp"
#include "gsvgd/gaussian_mrf.hpp"
#include "gsvgd/kernel.hpp"
#include "gsvgd/model.hpp"
#include "gsvgd/rng.hpp"

using namespace gsvgd;

namespace {

CoordinateKernel global_kernel(int d, double h) {
  CoordinateKernel ker;
  for (int i = 0; i < d; ++i) ker.domain.push_back(i);
  ker.bandwidth = h;
  return ker;
}

std::vector<CoordinateKernel> local_kernels(const GraphicalModel &model,
                                            const Matrix &particles) {
  KernelSpec spec;
  spec.variant = KernelVariant::Local;
  RngStream rng(0);
  return coordinate_kernels(spec, model, particles, rng);
}

}  // namespace

TEST_CASE("two-particle analytic direction") {
  auto [model, params] = standard_gaussian(1);
  Matrix particles(2, 1);
  particles << -1.0, 1.0;
  const auto ker = global_kernel(1, 1.0);
  const Matrix dir = svgd_direction_vanilla(particles, model, ker);
  const double expect = 0.5 * (-1.0 + 5.0 * std::exp(-4.0));  // -0.454210903
  CHECK(dir(1, 0) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(dir(0, 0) == doctest::Approx(-expect).epsilon(1e-9));
  CHECK(dir(1, 0) == doctest::Approx(-0.454210).epsilon(1e-5));

  // graphical with the same (local = full) kernel agrees
  const Matrix gdir = graphical_direction(particles, model, {ker});
  CHECK((gdir - dir).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single particle gives gradient ascent") {
  RngStream rng(3);
  auto [model, params] = build_gaussian_mrf({{0, 1}, {1, 2}}, 3, rng);
  Matrix particles(1, 3);
  particles << 0.4, -0.2, 1.1;
  const Vector score = model.score(particles.row(0).transpose());

  const Matrix vdir = svgd_direction_vanilla(particles, model, global_kernel(3, 2.0));
  CHECK((vdir.row(0).transpose() - score).cwiseAbs().maxCoeff() < 1e-14);

  const Matrix gdir = graphical_direction(particles, model, local_kernels(model, particles));
  CHECK((gdir.row(0).transpose() - score).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("graphical direction with global kernels reduces to vanilla") {
  RngStream rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const int d = 2 + static_cast<int>(rng.below(6));
    const int n = 2 + static_cast<int>(rng.below(10));
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < d; ++i) edges.emplace_back(i, i + 1);
    auto [model, params] = build_gaussian_mrf(edges, d, rng);
    Matrix particles(n, d);
    for (int l = 0; l < n; ++l)
      for (int j = 0; j < d; ++j) particles(l, j) = rng.normal();

    KernelSpec spec;
    spec.variant = KernelVariant::Global;
    RngStream krng(0);
    const auto kernels = coordinate_kernels(spec, model, particles, krng);
    const Matrix vdir = svgd_direction_vanilla(particles, model, kernels.front());
    const Matrix gdir = graphical_direction(particles, model, kernels);
    CHECK((vdir - gdir).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("factorized target decouples into per-coordinate vanilla directions") {
  auto [model3, params3] = standard_gaussian(3);
  auto [model1, params1] = standard_gaussian(1);
  Matrix particles(2, 3);
  particles << -1.0, -1.0, -1.0, 1.0, 1.0, 1.0;
  KernelSpec spec;
  spec.variant = KernelVariant::Local;
  spec.bandwidth_rule = BandwidthRule::Fixed;
  spec.fixed_bandwidth = 1.0;
  RngStream rng(0);
  const auto kernels = coordinate_kernels(spec, model3, particles, rng);
  const Matrix dir = graphical_direction(particles, model3, kernels);
  const double expect = 0.5 * (-1.0 + 5.0 * std::exp(-4.0));
  for (int i = 0; i < 3; ++i) {
    CHECK(dir(1, i) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(dir(0, i) == doctest::Approx(-expect).epsilon(1e-9));
  }
}

TEST_CASE("adagrad_step") {
  SUBCASE("first step moves by about the master step") {
    Matrix particles = Matrix::Zero(1, 2);
    Matrix direction(1, 2);
    direction << 2.0, -3.0;
    OptimizerState state;
    state.master_step = 0.1;
    adagrad_step(particles, direction, state);
    CHECK(particles(0, 0) == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(particles(0, 1) == doctest::Approx(-0.1).epsilon(1e-5));
  }
  SUBCASE("zero direction leaves particles unchanged") {
    Matrix particles = Matrix::Constant(2, 2, 0.7);
    OptimizerState state;
    state.master_step = 0.5;
    adagrad_step(particles, Matrix::Zero(2, 2), state);
    CHECK((particles.array() == 0.7).all());
  }
  SUBCASE("accumulator is entrywise nondecreasing") {
    RngStream rng(7);
    Matrix particles = Matrix::Zero(3, 2);
    OptimizerState state;
    state.master_step = 0.1;
    Matrix prev = Matrix::Zero(3, 2);
    for (int t = 0; t < 5; ++t) {
      Matrix dir(3, 2);
      for (int l = 0; l < 3; ++l)
        for (int j = 0; j < 2; ++j) dir(l, j) = rng.normal();
      adagrad_step(particles, dir, state);
      CHECK(((state.accumulator - prev).array() >= 0.0).all());
      prev = state.accumulator;
    }
  }
  SUBCASE("clip box projects the update") {
    Matrix particles = Matrix::Constant(1, 1, 2.5);
    Matrix direction = Matrix::Constant(1, 1, 100.0);
    OptimizerState state;
    state.master_step = 1.0;
    ClipBox clip;
    clip.lo = Vector::Constant(1, -3.0);
    clip.hi = Vector::Constant(1, 3.0);
    adagrad_step(particles, direction, state, &clip);
    CHECK(particles(0, 0) == doctest::Approx(3.0));
  }
}

TEST_CASE("langevin_step") {
  auto [model, params] = standard_gaussian(1);
  SUBCASE("zero step size is the identity") {
    Matrix particles(3, 1);
    particles << -1.0, 0.0, 2.0;
    const Matrix before = particles;
    RngStream rng(11);
    langevin_step(particles, model, 0.0, rng);
    CHECK((particles - before).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("long run reaches the stationary variance") {
    Matrix particles = Matrix::Zero(500, 1);
    RngStream rng(13);
    for (int t = 0; t < 4000; ++t) langevin_step(particles, model, 1e-2, rng);
    const double mean = particles.col(0).mean();
    const double var = particles.col(0).array().square().mean() - mean * mean;
    CHECK(var > 0.9);
    CHECK(var < 1.1);
  }
}

TEST_CASE("run") {
  RngStream mrng(17);
  auto [model, params] = build_gaussian_mrf({{0, 1}}, 2, mrng);

  SUBCASE("zero iterations returns the initialization") {
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.iterations = 0;
    cfg.particle_count = 5;
    cfg.seed = 42;
    const auto out = run(model, cfg);
    EngineConfig cfg2 = cfg;
    cfg2.iterations = 10;
    const auto out2 = run(model, cfg2);
    // same seed, same init; zero-iteration run must equal the other's start
    RngStream rng(42);
    Matrix init(5, 2);
    for (int l = 0; l < 5; ++l)
      for (int j = 0; j < 2; ++j) init(l, j) = rng.normal();
    CHECK((out.final - init).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out2.final - init).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("identical seeds give bit-identical trajectories") {
    for (Algorithm alg :
         {Algorithm::VanillaSvgd, Algorithm::GraphicalSvgd, Algorithm::Langevin}) {
      EngineConfig cfg;
      cfg.algorithm = alg;
      cfg.iterations = 20;
      cfg.particle_count = 8;
      cfg.seed = 77;
      cfg.kernel.variant =
          alg == Algorithm::VanillaSvgd ? KernelVariant::Global : KernelVariant::Local;
      const auto a = run(model, cfg);
      const auto b = run(model, cfg);
      CHECK((a.final - b.final).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("random-subset runs are deterministic too") {
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.kernel.variant = KernelVariant::RandomSubset;
    cfg.kernel.subset_size = 2;
    cfg.iterations = 15;
    cfg.particle_count = 6;
    cfg.seed = 123;
    const auto a = run(model, cfg);
    const auto b = run(model, cfg);
    CHECK((a.final - b.final).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("graphical run on a factorized target equals independent 1-D vanilla runs") {
    auto [model3, params3] = standard_gaussian(3);
    auto [model1, params1] = standard_gaussian(1);
    RngStream rng(19);
    Matrix init(6, 3);
    for (int l = 0; l < 6; ++l)
      for (int j = 0; j < 3; ++j) init(l, j) = rng.normal();

    EngineConfig gcfg;
    gcfg.algorithm = Algorithm::GraphicalSvgd;
    gcfg.kernel.variant = KernelVariant::Local;
    gcfg.iterations = 40;
    gcfg.seed = 7;
    const auto gout = run(model3, gcfg, &init);

    for (int j = 0; j < 3; ++j) {
      EngineConfig vcfg;
      vcfg.algorithm = Algorithm::VanillaSvgd;
      vcfg.kernel.variant = KernelVariant::Global;
      vcfg.iterations = 40;
      vcfg.seed = 7;
      const Matrix col = init.col(j);
      const auto vout = run(model1, vcfg, &col);
      CHECK((gout.final.col(j) - vout.final.col(0)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("checkpoints are recorded with bandwidths") {
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.iterations = 10;
    cfg.checkpoint_every = 5;
    cfg.particle_count = 4;
    const auto out = run(model, cfg);
    REQUIRE(out.checkpoints.size() == 2);
    REQUIRE(out.log.checkpoints.size() == 2);
    CHECK(out.log.checkpoints[0].iteration == 5);
    CHECK(out.log.checkpoints[1].iteration == 10);
    CHECK(out.log.checkpoints[0].bandwidths.size() == 2);
    CHECK((out.checkpoints[1] - out.final).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(out.log.to_json());
  }

  SUBCASE("diverging dynamics abort with the iteration index") {
    std::vector<CliquePotential> pots;
    pots.push_back({{0},
                    [](const Vector &v) { return -0.25 * std::pow(v(0), 4.0); },
                    [](const Vector &v) {
                      Vector g(1);
                      g(0) = -std::pow(v(0), 3.0);
                      return g;
                    }});
    const GraphicalModel quartic(1, std::move(pots));
    Matrix init = Matrix::Constant(1, 1, 2.0);
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.kernel.variant = KernelVariant::Local;
    cfg.use_adagrad = false;
    cfg.master_step = 100.0;
    cfg.iterations = 200;
    CHECK_THROWS_AS(run(quartic, cfg, &init), EngineAbort);
    try {
      run(quartic, cfg, &init);
    } catch (const EngineAbort &e) {
      CHECK(e.iteration >= 1);
      CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
  }
}

TEST_CASE("translation equivariance of SVGD trajectories") {
  RngStream rng(23);
  auto [model, params] = build_gaussian_mrf({{0, 1}, {1, 2}}, 3, rng);
  Vector delta(3);
  delta << 0.7, -1.2, 0.4;
  GaussianMrfParams shifted = params;
  shifted.b = params.b + params.A * delta;
  const auto shifted_model = gaussian_model_from_params(shifted);

  Matrix init(5, 3);
  for (int l = 0; l < 5; ++l)
    for (int j = 0; j < 3; ++j) init(l, j) = rng.normal();
  Matrix init_shifted = init;
  init_shifted.rowwise() += delta.transpose();

  for (Algorithm alg : {Algorithm::VanillaSvgd, Algorithm::GraphicalSvgd}) {
    EngineConfig cfg;
    cfg.algorithm = alg;
    cfg.kernel.variant =
        alg == Algorithm::VanillaSvgd ? KernelVariant::Global : KernelVariant::Local;
    cfg.iterations = 30;
    cfg.seed = 11;
    const auto base = run(model, cfg, &init);
    const auto moved = run(shifted_model, cfg, &init_shifted);
    Matrix expect = base.final;
    expect.rowwise() += delta.transpose();
    CHECK((moved.final - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("blanket access audit") {
  SUBCASE("factorized model with local kernels reads only the own column") {
    auto [model, params] = standard_gaussian(4);
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.kernel.variant = KernelVariant::Local;
    cfg.particle_count = 6;
    const auto report = blanket_access_audit(model, cfg);
    CHECK(report.pass);
    for (int i = 0; i < 4; ++i) CHECK(report.read_columns[i] == std::vector<int>{i});
  }

  SUBCASE("grid model with local kernels stays inside closed blankets") {
    RngStream rng(29);
    auto [model, params] = build_gaussian_mrf(grid_graph(4, 4), 16, rng);
    EngineConfig cfg;
    cfg.algorithm = Algorithm::GraphicalSvgd;
    cfg.kernel.variant = KernelVariant::Local;
    cfg.particle_count = 6;
    const auto report = blanket_access_audit(model, cfg);
    CHECK(report.pass);
    for (int i = 0; i < 16; ++i) {
      CHECK(report.read_columns[i].size() <= 5);
      CHECK(report.read_columns[i] == model.closed_blanket(i));
    }
  }

  SUBCASE("global kernels document full-row reads") {
    RngStream rng(31);
    auto [model, params] = build_gaussian_mrf(grid_graph(3, 3), 9, rng);
    EngineConfig cfg;
    cfg.algorithm = Algorithm::VanillaSvgd;
    cfg.particle_count = 6;
    const auto report = blanket_access_audit(model, cfg);
    CHECK(report.pass);  // reads are within D_i = all coordinates
    for (int i = 0; i < 9; ++i) CHECK(report.read_columns[i].size() == 9);
  }

  SUBCASE("langevin reads stay inside closed blankets") {
    RngStream rng(37);
    auto [model, params] = build_gaussian_mrf(grid_graph(3, 3), 9, rng);
    EngineConfig cfg;
    cfg.algorithm = Algorithm::Langevin;
    cfg.particle_count = 4;
    const auto report = blanket_access_audit(model, cfg);
    CHECK(report.pass);
    for (int i = 0; i < 9; ++i) CHECK(report.read_columns[i] == model.closed_blanket(i));
  }
}
