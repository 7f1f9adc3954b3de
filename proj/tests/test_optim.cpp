#include "lossmap/basinhop.hpp"
#include "lossmap/optim.hpp"
#include "lossmap/symmetry.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace lossmap;

namespace {

Dataset test_board(int n = 200, std::uint64_t seed = 7) {
  return gen_checkerboard(n, 4, 0.0, derive_seed(seed, "dataset"));
}

Vec random_start(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec p(n);
  for (int i = 0; i < n; ++i) p[i] = u(rng);
  return p;
}

}  // namespace

TEST_CASE("minimize validates its inputs") {
  auto quad = [](const Vec& x, Vec& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  Vec bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(minimize(quad, bad), std::invalid_argument);
  MinimizeConfig cfg;
  cfg.grad_tol = 0.0;
  CHECK_THROWS_AS(minimize(quad, Vec::Ones(2), cfg), std::invalid_argument);
  cfg = {};
  cfg.max_iters = 0;
  CHECK_THROWS_AS(minimize(quad, Vec::Ones(2), cfg), std::invalid_argument);
}

TEST_CASE("minimize solves a shifted quadratic exactly") {
  Vec target(5);
  target << 1.0, -2.0, 0.5, 3.0, -0.25;
  auto fg = [&](const Vec& x, Vec& g) {
    g = x - target;
    return 0.5 * (x - target).squaredNorm();
  };
  auto res = minimize(fg, random_start(5, 1));
  CHECK(res.converged);
  CHECK((res.params - target).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(res.loss < 1e-12);
}

TEST_CASE("minimize handles the Rosenbrock valley") {
  auto fg = [](const Vec& x, Vec& g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Vec start(2);
  start << -1.2, 1.0;
  auto res = minimize(fg, start);
  CHECK(res.converged);
  CHECK(std::abs(res.params[0] - 1.0) < 1e-6);
  CHECK(std::abs(res.params[1] - 1.0) < 1e-6);
}

TEST_CASE("a converged point returns immediately") {
  auto fg = [](const Vec& x, Vec& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  auto res = minimize(fg, Vec::Zero(3));
  CHECK(res.converged);
  CHECK(res.iterations == 0);
}

TEST_CASE("non-finite start loss raises") {
  auto fg = [](const Vec& x, Vec& g) {
    g = x;
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(minimize(fg, Vec::Ones(2)), std::runtime_error);
}

TEST_CASE("quench on the checkerboard net converges and descends") {
  auto ds = test_board();
  Architecture arch{2, {5}, 2};
  MinimizeConfig cfg;
  cfg.l2_penalty = 1e-4;
  cfg.max_iters = 4000;
  Vec start = random_start(arch.parameter_count(), 3);
  const double f0 = loss(arch, start, ds) + cfg.l2_penalty * start.squaredNorm();
  auto res = minimize(arch, ds, start, cfg);
  CHECK(res.converged);
  CHECK(res.loss < f0);
  // re-verify the stored gradient norm independently
  Vec g = gradient(arch, res.params, ds) + 2.0 * cfg.l2_penalty * res.params;
  CHECK(g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol);
  CHECK(res.grad_norm == g.lpNorm<Eigen::Infinity>());
}

TEST_CASE("quench agrees with a plain gradient-descent oracle") {
  auto ds = test_board(60, 11);
  Architecture arch{2, {3}, 2};
  MinimizeConfig cfg;
  cfg.l2_penalty = 1e-3;  // stiff enough that GD converges in reasonable time
  cfg.max_iters = 4000;
  Vec start = random_start(arch.parameter_count(), 5);
  auto res = minimize(arch, ds, start, cfg);
  REQUIRE(res.converged);

  ModelObjective obj{&arch, &ds, cfg.l2_penalty};
  Vec x = start, g(x.size());
  double f = obj(x, g);
  for (int it = 0; it < 200000 && g.lpNorm<Eigen::Infinity>() > 1e-6; ++it) {
    double step = 0.5;
    Vec xn = x - step * g, gn(x.size());
    double fn = obj(xn, gn);
    while (fn > f && step > 1e-12) {  // crude backtracking
      step *= 0.5;
      xn = x - step * g;
      fn = obj(xn, gn);
    }
    x = xn;
    f = fn;
    g = gn;
  }
  CHECK(std::abs(f - res.loss) < 1e-6);
}

TEST_CASE("runaway iterates are reported as unconverged") {
  // gradient vanishes as x grows: f = 1/(1+x^2) pushes x to infinity
  auto fg = [](const Vec& x, Vec& g) {
    const double d = 1.0 + x.squaredNorm();
    g = -2.0 / (d * d) * x;
    return 1.0 / d;
  };
  MinimizeConfig cfg;
  cfg.grad_tol = 1e-15;  // unreachable inside the cap: the iterates flee first
  cfg.param_cap = 1e3;
  cfg.max_iters = 100000;
  auto res = minimize(fg, Vec::Ones(2), cfg);
  CHECK_FALSE(res.converged);
  CHECK(res.params.lpNorm<Eigen::Infinity>() > 1e2);
}

TEST_CASE("basin hop config validation") {
  auto ds = test_board(50);
  Architecture arch{2, {2}, 2};
  LandscapeDatabase db(arch, ds);
  BasinHopConfig cfg;
  cfg.perturbation_scale = 0.0;
  CHECK_THROWS_AS(basin_hop(arch, ds, cfg, db), std::invalid_argument);
  cfg = {};
  cfg.metropolis_temperature = -1.0;
  CHECK_THROWS_AS(basin_hop(arch, ds, cfg, db), std::invalid_argument);
}

TEST_CASE("basin hop rejects a mismatched database") {
  auto ds = test_board(50);
  Architecture arch{2, {2}, 2};
  LandscapeDatabase db(arch, 12345u);  // wrong fingerprint
  BasinHopConfig cfg;
  cfg.n_steps = 1;
  CHECK_THROWS(basin_hop(arch, ds, cfg, db));
}

TEST_CASE("zero steps stores at most the initial quench") {
  auto ds = test_board(100);
  Architecture arch{2, {3}, 2};
  BasinHopConfig cfg;
  cfg.n_steps = 0;
  cfg.min_cfg.l2_penalty = 1e-4;
  cfg.min_cfg.grad_tol = 1e-8;
  cfg.min_cfg.max_iters = 4000;
  cfg.seed = 9;
  LandscapeDatabase db(arch, ds, cfg.min_cfg.l2_penalty);
  auto hist = basin_hop(arch, ds, cfg, db);
  CHECK(hist.empty());
  CHECK(db.minima().size() <= 1);
}

TEST_CASE("identical seeds give identical runs") {
  auto ds = test_board(150);
  Architecture arch{2, {5}, 2};
  BasinHopConfig cfg;
  cfg.n_steps = 10;
  cfg.perturbation_scale = 2.0;
  cfg.min_cfg.l2_penalty = 1e-4;
  cfg.min_cfg.grad_tol = 1e-8;
  cfg.min_cfg.max_iters = 4000;
  cfg.seed = derive_seed(7, "walker-0");

  LandscapeDatabase a(arch, ds, cfg.min_cfg.l2_penalty);
  LandscapeDatabase b(arch, ds, cfg.min_cfg.l2_penalty);
  auto ha = basin_hop(arch, ds, cfg, a);
  auto hb = basin_hop(arch, ds, cfg, b);
  REQUIRE(a.minima().size() == b.minima().size());
  for (std::size_t i = 0; i < a.minima().size(); ++i) {
    CHECK(a.minima()[i].id == b.minima()[i].id);
    CHECK(a.minima()[i].loss_value == b.minima()[i].loss_value);
    CHECK((a.minima()[i].params - b.minima()[i].params).lpNorm<Eigen::Infinity>() ==
          0.0);
    CHECK(a.minima()[i].discovery_count == b.minima()[i].discovery_count);
  }
  REQUIRE(ha.size() == hb.size());
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].proposed_loss == hb[i].proposed_loss);
    CHECK(ha[i].accepted == hb[i].accepted);
  }
}

TEST_CASE("metropolis acceptance matches its rule") {
  auto ds = test_board(150);
  Architecture arch{2, {5}, 2};
  BasinHopConfig cfg;
  cfg.n_steps = 60;
  cfg.perturbation_scale = 2.0;
  cfg.metropolis_temperature = 0.05;
  cfg.min_cfg.l2_penalty = 1e-4;
  cfg.min_cfg.grad_tol = 1e-8;
  cfg.min_cfg.max_iters = 4000;
  cfg.seed = 1234;
  LandscapeDatabase db(arch, ds, cfg.min_cfg.l2_penalty);
  auto hist = basin_hop(arch, ds, cfg, db);
  REQUIRE_FALSE(hist.empty());
  int uphill = 0, uphill_accepted = 0;
  double expected_uphill = 0.0;
  for (const auto& h : hist) {
    const double delta = h.proposed_loss - h.anchor_loss;
    if (delta <= 0.0) {
      CHECK(h.accepted);  // downhill moves are always taken
    } else {
      ++uphill;
      uphill_accepted += h.accepted;
      expected_uphill += std::exp(-delta / cfg.metropolis_temperature);
    }
  }
  if (uphill >= 10) {
    // crude binomial sanity band around the expected acceptance count
    const double sd = std::sqrt(static_cast<double>(uphill));
    CHECK(std::abs(uphill_accepted - expected_uphill) < 4.0 * sd + 2.0);
  }
}

TEST_CASE("stored minima are canonical, deduplicated and verified") {
  auto ds = test_board(150);
  Architecture arch{2, {5}, 2};
  BasinHopConfig cfg;
  cfg.n_steps = 40;
  cfg.perturbation_scale = 2.0;
  cfg.min_cfg.l2_penalty = 1e-4;
  cfg.min_cfg.grad_tol = 1e-8;
  cfg.min_cfg.max_iters = 4000;
  cfg.seed = derive_seed(7, "walker-0");
  LandscapeDatabase db(arch, ds, cfg.min_cfg.l2_penalty);
  basin_hop(arch, ds, cfg, db);
  REQUIRE(db.minima().size() >= 3);  // distinct basins at this scale

  int rediscovered = 0;
  for (const auto& m : db.minima()) {
    Vec g = gradient(arch, m.params, ds) + 2.0 * cfg.min_cfg.l2_penalty * m.params;
    CHECK(g.lpNorm<Eigen::Infinity>() <= cfg.min_cfg.grad_tol);
    CHECK((canonicalize(arch, m.params) - m.params).lpNorm<Eigen::Infinity>() == 0.0);
    rediscovered += m.discovery_count > 1;
  }
  CHECK(rediscovered >= 1);  // the dedup path actually fired

  for (std::size_t i = 0; i < db.minima().size(); ++i)
    for (std::size_t j = i + 1; j < db.minima().size(); ++j)
      CHECK_FALSE(are_equivalent(arch, db.minima()[i].params,
                                 db.minima()[j].params, 1e-4));
}
