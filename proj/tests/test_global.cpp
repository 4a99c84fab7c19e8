#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fds/global.hpp"
#include "fds/problem_io.hpp"
#include "fds/verify.hpp"

using namespace fds;

namespace {

Problem make_problem(const std::string& mu, const std::string& sigma,
                     const std::string& f, const std::string& phi, double x0,
                     double C = 1.0, double Cprime = 1.0) {
  Problem p;
  p.n = p.d = p.m = 1;
  p.ops.L1.variant = OperatorVariant::Ito;
  p.ops.L2.variant = OperatorVariant::Identity;
  p.ops.L3.variant = OperatorVariant::Ito;
  p.mu = CoefficientFn::from_strings({mu}, 1, 1);
  p.sigma = CoefficientFn::from_strings({sigma}, 1, 1);
  p.f = CoefficientFn::from_strings({f}, 1, 1);
  p.terminal = TerminalSpec::pointwise({phi}, Cprime);
  p.x0 = VectorXd::Constant(1, x0);
  p.v0 = VectorXd::Zero(1);
  p.lipschitz_C = C;
  return p;
}

Problem riccati() { return make_problem("-y1", "1", "0", "x1", 1.0); }

GlobalConfig wide_config(double lo, double hi, int n, double max_len) {
  GlobalConfig cfg;
  cfg.x_lo = lo;
  cfg.x_hi = hi;
  cfg.x_grid_n = n;
  cfg.max_len = max_len;
  return cfg;
}

double root_y(const Problem& p, const ScenarioTree& tree, const SolutionPair& sol) {
  AdaptedProcess Y = apply_Y(tree, p.terminal, sol.X, sol.V);
  return Y.at(0)(0, 0);
}

}  // namespace

TEST_CASE("build_partition examples") {
  TimeGrid grid = make_grid(1.0, 0.0, 4);
  SUBCASE("half-horizon cap") {
    Partition part = build_partition(grid, 0.5);
    REQUIRE(part.count() == 2);
    CHECK(part.boundaries == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(part.levels == std::vector<int>{0, 2, 4});
  }
  SUBCASE("cap above the horizon gives one interval") {
    Partition part = build_partition(grid, 2.0);
    REQUIRE(part.count() == 1);
    CHECK(part.boundaries == std::vector<double>{0.0, 1.0});
  }
  SUBCASE("cap below 2 dt forces the grid") {
    Partition part = build_partition(grid, 0.3);
    REQUIRE(part.count() == 4);
    CHECK(part.boundaries == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  }
  SUBCASE("boundaries align to grid times and respect the cap") {
    TimeGrid g2 = make_grid(2.0, 0.0, 10);
    Partition part = build_partition(g2, 0.7);
    for (size_t i = 0; i + 1 < part.boundaries.size(); ++i) {
      const double len = part.boundaries[i + 1] - part.boundaries[i];
      CHECK(len <= 0.7 + 1e-12);
      CHECK(len >= g2.dt - 1e-12);
    }
    for (size_t i = 0; i < part.levels.size(); ++i)
      CHECK(part.boundaries[i] ==
            doctest::Approx(g2.time(part.levels[i])).epsilon(1e-12));
  }
}

TEST_CASE("backward terminal maps") {
  SUBCASE("identity problem: theta0(x) = x at the root") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "1", "0", "x1", 0.0);
    GlobalConfig cfg = wide_config(-4.0, 4.0, 17, 2.0);
    Partition part = build_partition(tree.grid(), 2.0);
    auto thetas = backward_terminal_maps(p, tree, part, cfg);
    REQUIRE(thetas.size() == 1);
    CHECK(thetas[0].level == 0);
    for (int g = 0; g < cfg.x_grid_n; ++g) {
      const double x = thetas[0].grid_x(g);
      CHECK(thetas[0].eval(0, x)(0) == doctest::Approx(x).epsilon(1e-9));
    }
    CHECK(thetas[0].est_lipschitz == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("mean-reverting maps match the linear field") {
    ScenarioTree tree = build_tree(1.0, 0.0, 8, 1);
    Problem p = riccati();
    GlobalConfig cfg = wide_config(-4.0, 4.0, 33, 0.5);
    Partition part = build_partition(tree.grid(), 0.5);
    REQUIRE(part.count() == 2);
    auto thetas = backward_terminal_maps(p, tree, part, cfg);
    REQUIRE(thetas.size() == 2);
    // theta_1 lives at T = 0.5 where the field is x / (1 + T - t) = x / 1.5.
    CHECK(thetas[1].level == 4);
    for (std::int64_t v = 0; v < tree.nodes_at(4); ++v)
      for (double x : {-2.0, -0.5, 0.0, 1.0, 3.0})
        CHECK(thetas[1].eval(v, x)(0) == doctest::Approx(x / 1.5).epsilon(1e-7));
    CHECK(thetas[1].est_lipschitz == doctest::Approx(1.0 / 1.5).epsilon(1e-7));
    CHECK(thetas[0].est_lipschitz == doctest::Approx(1.0 / 2.0).epsilon(1e-7));
  }
  SUBCASE("constant terminal propagates unchanged") {
    ScenarioTree tree = build_tree(1.0, 0.0, 6, 1);
    Problem p = make_problem("-y1", "1", "0", "0.75", 1.0, 0.0);
    GlobalConfig cfg = wide_config(-3.0, 3.0, 9, 0.34);
    Partition part = build_partition(tree.grid(), 0.34);
    auto thetas = backward_terminal_maps(p, tree, part, cfg);
    for (const TerminalMap& theta : thetas)
      for (std::int64_t v = 0; v < tree.nodes_at(theta.level); ++v)
        for (int g = 0; g < theta.grid_n; ++g)
          CHECK(theta.eval(v, theta.grid_x(g))(0) ==
                doctest::Approx(0.75).epsilon(1e-9));
  }
}

TEST_CASE("solve_global on the zero problem") {
  ScenarioTree tree = build_tree(2.0, 0.0, 8, 1);
  Problem p = make_problem("0", "0", "0", "1", 1.5, 1.0, 0.0);
  GlobalConfig cfg = wide_config(-2.0, 4.0, 13, 0.5);
  auto [sol, report] = solve_global(p, tree, cfg);
  CHECK(report.partition.count() == 4);
  CHECK(report.max_interface_mismatch == 0.0);
  CHECK(report.bisections == 0);
  for (int k = 0; k < tree.levels(); ++k) {
    CHECK((sol.X.at(k).array() - 1.5).abs().maxCoeff() <= 1e-12);
    CHECK(sol.V.at(k).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("piecewise solve matches the direct one on a contractive horizon") {
  ScenarioTree tree = build_tree(1.0, 0.0, 8, 1);
  Problem p = riccati();
  GlobalConfig one = wide_config(-4.0, 5.0, 46, 1.0);
  GlobalConfig two = wide_config(-4.0, 5.0, 46, 0.5);
  auto [sol1, rep1] = solve_global(p, tree, one);
  auto [sol2, rep2] = solve_global(p, tree, two);
  CHECK(rep1.partition.count() == 1);
  CHECK(rep2.partition.count() == 2);
  const double y1 = root_y(p, tree, sol1);
  const double y2 = root_y(p, tree, sol2);
  CHECK(std::abs(y1 - y2) <= 1e-6);

  auto [sol_direct, rep_direct] = solve_local(p, tree, {});
  REQUIRE(rep_direct.converged);
  CHECK(std::abs(root_y(p, tree, sol_direct) - y2) <= 1e-6);
  CHECK(rep2.max_interface_mismatch <= 1e-6);
}

TEST_CASE("long-horizon solve hits the closed form") {
  ScenarioTree tree = build_tree(2.0, 0.0, 12, 1);
  Problem p = riccati();
  p.rho_C = 2.0;
  GlobalConfig cfg = wide_config(-4.0, 5.0, 46, 0.5);
  auto [sol, report] = solve_global(p, tree, cfg);
  const double y0 = root_y(p, tree, sol);
  CHECK(std::abs(y0 - 1.0 / 3.0) <= 0.08);
  CHECK(report.max_interface_mismatch <= 1e-6);
  // Theta Lipschitz chain: measured <= Zhang bound + one grid cell of slack.
  const double cell = (cfg.x_hi - cfg.x_lo) / (cfg.x_grid_n - 1);
  for (const IntervalReport& iv : report.intervals) {
    REQUIRE(iv.zhang_bound.has_value());
    CHECK(iv.theta_lipschitz <= *iv.zhang_bound + cell);
    // Oracle: the field slope at t is 1 / (1 + T - t).
    CHECK(iv.theta_lipschitz ==
          doctest::Approx(1.0 / (1.0 + 2.0 - iv.t_lo)).epsilon(1e-6));
  }
}

TEST_CASE("zhang_y0_lipschitz") {
  SUBCASE("identity field has slope one") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "1", "0", "x1", 0.0);
    CHECK(zhang_y0_lipschitz(p, tree, {{0.0, 1.0}, {-1.0, 2.0}}) ==
          doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("mean-reverting field has slope 1/(1+T)") {
    ScenarioTree tree = build_tree(1.0, 0.0, 6, 1);
    CHECK(std::abs(zhang_y0_lipschitz(riccati(), tree, {{0.0, 1.0}, {1.0, 2.0}}) -
                   0.5) <= 0.05);
  }
  SUBCASE("constant terminal has slope zero") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "1", "0", "2", 0.0, 1.0, 0.0);
    CHECK(zhang_y0_lipschitz(p, tree, {{0.0, 1.0}}) <= 1e-12);
  }
}

TEST_CASE("zhang_chain formula") {
  CHECK(zhang_chain(1.0, 2.0, 0.5) ==
        doctest::Approx(std::sqrt(2.0 * std::exp(1.0) - 1.0)));
  CHECK(zhang_chain(0.0, 1.0, 0.0) == doctest::Approx(0.0));
  // Nondecreasing in the interval length.
  CHECK(zhang_chain(1.0, 2.0, 0.75) > zhang_chain(1.0, 2.0, 0.5));
}

TEST_CASE("guards and scope") {
  SUBCASE("initial value outside the grid") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = riccati();
    GlobalConfig cfg = wide_config(0.0, 0.1, 3, 0.5);
    CHECK_THROWS_AS(solve_global(p, tree, cfg), GridOutOfRange);
  }
  SUBCASE("no contractive partition exists") {
    ProblemConfig ce = make_builtin("counterexample");
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    GlobalConfig cfg = wide_config(-3.0, 3.0, 7, 1.0);
    CHECK_THROWS_AS(solve_global(ce.problem, tree, cfg), PartitionExhausted);
  }
  SUBCASE("n must be 1") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = riccati();
    p.n = 2;
    p.mu = CoefficientFn::from_strings({"-y1", "0"}, 2, 1);
    p.sigma = CoefficientFn::from_strings({"1", "1"}, 2, 1);
    p.x0 = VectorXd::Zero(2);
    CHECK_THROWS_AS(solve_global(p, tree, wide_config(-3, 3, 7, 0.5)),
                    ScopeViolation);
  }
  SUBCASE("sigma must not read the operator output") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = riccati();
    p.sigma = CoefficientFn::from_strings({"z1"}, 1, 1);
    CHECK_THROWS_AS(solve_global(p, tree, wide_config(-3, 3, 7, 0.5)),
                    ScopeViolation);
  }
  SUBCASE("path terminals are out of scope") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = riccati();
    p.terminal = TerminalSpec::path_sup({"x1"}, 1.0);
    CHECK_THROWS_AS(solve_global(p, tree, wide_config(-3, 3, 7, 0.5)),
                    ScopeViolation);
  }
  SUBCASE("config validation") {
    GlobalConfig bad = wide_config(1.0, -1.0, 7, 0.5);
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    GlobalConfig coarse = wide_config(-1.0, 1.0, 2, 0.5);
    CHECK_THROWS_AS(coarse.validate(), ValidationError);
  }
}

TEST_CASE("default x range covers the initial value generously") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  Problem p = riccati();
  auto [lo, hi] = default_x_range(p, tree);
  CHECK(lo < 1.0 - 3.0);
  CHECK(hi > 1.0 + 3.0);
}
