#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "fds/picard.hpp"
#include "fds/problem_io.hpp"

using namespace fds;

namespace {

Problem make_problem(const std::string& mu, const std::string& sigma,
                     const std::string& f, const std::string& phi, double x0,
                     double C = 1.0) {
  Problem p;
  p.n = p.d = p.m = 1;
  p.ops.L1.variant = OperatorVariant::Ito;
  p.ops.L2.variant = OperatorVariant::Identity;
  p.ops.L3.variant = OperatorVariant::Ito;
  p.mu = CoefficientFn::from_strings({mu}, 1, 1);
  p.sigma = CoefficientFn::from_strings({sigma}, 1, 1);
  p.f = CoefficientFn::from_strings({f}, 1, 1);
  p.terminal = TerminalSpec::pointwise({phi}, C);
  p.x0 = VectorXd::Constant(1, x0);
  p.v0 = VectorXd::Zero(1);
  p.lipschitz_C = C;
  return p;
}

Problem riccati() { return make_problem("-y1", "1", "0", "x1", 1.0); }

double solved_y0(const Problem& p, const ScenarioTree& tree,
                 const PicardConfig& cfg = {}) {
  auto [pair, report] = solve_local(p, tree, cfg);
  REQUIRE(report.converged);
  AdaptedProcess Y = apply_Y(tree, p.terminal, pair.X, pair.V);
  return Y.at(0)(0, 0);
}

// Independent oracle for the scalar mean-reverting system: the decoupling
// field is linear, Y_t = alpha(t) X_t with alpha' = alpha^2, alpha(T) = 1,
// integrated backward by RK4.
double riccati_y0_oracle(double T, double x0) {
  double a = 1.0;
  const int steps = 10000;
  const double h = T / steps;
  auto rhs = [](double v) { return v * v; };
  for (int i = 0; i < steps; ++i) {
    const double k1 = rhs(a);
    const double k2 = rhs(a - 0.5 * h * k1);
    const double k3 = rhs(a - 0.5 * h * k2);
    const double k4 = rhs(a - h * k3);
    a -= h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return a * x0;
}

AdaptedProcess randomized(const ScenarioTree& tree, int dim, double base,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  AdaptedProcess p = AdaptedProcess::zero(tree, dim);
  for (int k = 0; k < tree.levels(); ++k)
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
      for (int r = 0; r < dim; ++r) p.at(k)(r, i) = base + normal(rng);
  return p;
}

}  // namespace

TEST_CASE("lift_map examples") {
  SUBCASE("zero coefficients give the constant pair for any input") {
    ScenarioTree tree = build_tree(1.0, 0.0, 3, 1);
    Problem p = make_problem("0", "0", "0", "2.5", 1.5);
    std::mt19937_64 rng(1);
    AdaptedProcess X = randomized(tree, 1, 0.0, rng);
    AdaptedProcess V = randomized(tree, 1, 0.0, rng);
    SolutionPair out = lift_map(p, tree, X, V);
    for (int k = 0; k < tree.levels(); ++k) {
      CHECK((out.X.at(k).array() - 1.5).abs().maxCoeff() == 0.0);
      CHECK(out.V.at(k).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("drift-free unit volatility gives x0 + W") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "1", "0", "x1", 0.25);
    std::mt19937_64 rng(2);
    AdaptedProcess X = randomized(tree, 1, 0.0, rng);
    AdaptedProcess V = randomized(tree, 1, 0.0, rng);
    SolutionPair out = lift_map(p, tree, X, V);
    for (int k = 0; k < tree.levels(); ++k)
      for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
        CHECK(out.X.at(k)(0, i) == doctest::Approx(0.25 + tree.walk(k)(0, i)));
  }
  SUBCASE("unit integrand sums to 1.0 over two steps") {
    ScenarioTree tree = build_tree(1.0, 0.0, 2, 1);
    Problem p = make_problem("0", "0", "1", "0", 0.0);
    AdaptedProcess X = AdaptedProcess::zero(tree, 1);
    AdaptedProcess V = AdaptedProcess::zero(tree, 1);
    SolutionPair out = lift_map(p, tree, X, V);
    CHECK(out.V.at(0)(0, 0) == 0.0);
    CHECK(out.V.at(1)(0, 0) == doctest::Approx(0.5));
    for (std::int64_t l = 0; l < 4; ++l)
      CHECK(out.V.at(2)(0, l) == doctest::Approx(1.0));
  }
  SUBCASE("custom dV weights") {
    ScenarioTree tree = build_tree(1.0, 0.0, 2, 1);
    Problem p = make_problem("0", "0", "1", "0", 0.0);
    p.alpha_v = {0.25, 0.75};
    SolutionPair out = lift_map(p, tree, AdaptedProcess::zero(tree, 1),
                                AdaptedProcess::zero(tree, 1));
    CHECK(out.V.at(1)(0, 0) == doctest::Approx(0.25));
    CHECK(out.V.at(2)(0, 0) == doctest::Approx(1.0));
    p.alpha_v = {0.25};
    CHECK_THROWS_AS(solve_local(p, tree, {}), ValidationError);
  }
  SUBCASE("non-finite states are reported") {
    ScenarioTree tree = build_tree(1.0, 0.0, 2, 1);
    Problem p = make_problem("x1*x1", "0", "0", "0", 1e200);
    CHECK_THROWS_AS(lift_map(p, tree, AdaptedProcess::constant(tree, p.x0),
                             AdaptedProcess::zero(tree, 1)),
                    NonFinite);
  }
}

TEST_CASE("problem validation") {
  ScenarioTree tree = build_tree(1.0, 0.0, 2, 1);
  Problem p = riccati();
  CHECK_NOTHROW(p.validate(tree));
  SUBCASE("L2 must be S2-valued") {
    p.ops.L2.variant = OperatorVariant::Ito;
    CHECK_THROWS_AS(p.validate(tree), ValidationError);
  }
  SUBCASE("shape mismatches") {
    p.sigma = CoefficientFn::from_strings({"1", "0"}, 2, 1);
    CHECK_THROWS_AS(p.validate(tree), ValidationError);
  }
  SUBCASE("out-of-signature variables") {
    p.mu = CoefficientFn::from_strings({"y2"}, 1, 1);
    CHECK_THROWS_AS(p.validate(tree), UnboundVariable);
  }
  SUBCASE("terminal cannot read y or z") {
    p.terminal = TerminalSpec::pointwise({"y1"}, 1.0);
    CHECK_THROWS_AS(p.validate(tree), ValidationError);
  }
  SUBCASE("walk dimension must match") {
    ScenarioTree t2 = build_tree(1.0, 0.0, 2, 2);
    CHECK_THROWS_AS(p.validate(t2), ValidationError);
  }
}

TEST_CASE("solve_local on the zero problem") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  Problem p = make_problem("0", "0", "0", "2.5", 1.5);
  auto [pair, report] = solve_local(p, tree, {});
  CHECK(report.converged);
  CHECK(report.iterations <= 2);
  for (int k = 0; k < tree.levels(); ++k) {
    CHECK((pair.X.at(k).array() - 1.5).abs().maxCoeff() <= 1e-12);
    CHECK(pair.V.at(k).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("solve_local on the mean-reverting problem") {
  ScenarioTree tree = build_tree(1.0, 0.0, 12, 1);
  Problem p = riccati();
  const double y0 = solved_y0(p, tree);
  const double oracle = riccati_y0_oracle(1.0, 1.0);
  CHECK(std::abs(oracle - 0.5) <= 1e-10);
  CHECK(std::abs(y0 - oracle) <= 0.05);
}

TEST_CASE("fixed point moves by at most tol under one extra lift") {
  ScenarioTree tree = build_tree(1.0, 0.0, 8, 1);
  Problem p = riccati();
  PicardConfig cfg;
  auto [pair, report] = solve_local(p, tree, cfg);
  REQUIRE(report.converged);
  SolutionPair lifted = lift_map(p, tree, pair.X, pair.V);
  CHECK(pair_distance(lifted, pair) <= cfg.tol);
}

TEST_CASE("uniqueness across initial guesses") {
  ScenarioTree tree = build_tree(1.0, 0.0, 6, 1);
  Problem p = riccati();
  PicardConfig cfg;
  std::mt19937_64 rng(404);
  std::vector<SolutionPair> sols;
  for (int g = 0; g < 5; ++g) {
    PicardConfig c = cfg;
    c.initial_guess = {{randomized(tree, 1, 1.0, rng), randomized(tree, 1, 0.0, rng)}};
    auto [pair, report] = solve_local(p, tree, c);
    REQUIRE(report.converged);
    sols.push_back(std::move(pair));
  }
  for (size_t a = 0; a < sols.size(); ++a)
    for (size_t b = a + 1; b < sols.size(); ++b)
      CHECK(pair_distance(sols[a], sols[b]) <= 10 * cfg.tol);
}

TEST_CASE("the self-referential terminal has no fixed point") {
  ProblemConfig cfg = make_builtin("counterexample");
  for (int steps : {4, 6, 8}) {
    ScenarioTree tree = build_tree(cfg.T, cfg.tau, steps, cfg.problem.m);
    CHECK_THROWS_AS(solve_local(cfg.problem, tree, cfg.picard), NonContractive);
  }
}

TEST_CASE("estimate_contraction") {
  SUBCASE("constant map has ratio zero") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "0", "0", "1", 1.0);
    CHECK(estimate_contraction(p, tree, 10, 1234) == 0.0);
  }
  SUBCASE("nondecreasing in the horizon") {
    Problem p = riccati();
    std::vector<double> ratios;
    for (double T : {0.125, 0.25, 0.5, 1.0}) {
      ScenarioTree tree = build_tree(T, 0.0, 6, 1);
      ratios.push_back(estimate_contraction(p, tree, 20, 99));
    }
    for (size_t i = 1; i < ratios.size(); ++i)
      CHECK(ratios[i] >= ratios[i - 1] - 1e-9);
    CHECK(ratios.front() < ratios.back());
  }
  SUBCASE("deterministic per seed") {
    ScenarioTree tree = build_tree(0.5, 0.0, 5, 1);
    Problem p = riccati();
    CHECK(estimate_contraction(p, tree, 10, 77) ==
          estimate_contraction(p, tree, 10, 77));
  }
}

TEST_CASE("lift output is adapted: sibling subtrees do not interact") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  Problem p = riccati();
  std::mt19937_64 rng(55);
  AdaptedProcess X = randomized(tree, 1, 1.0, rng);
  AdaptedProcess V = randomized(tree, 1, 0.0, rng);
  SolutionPair base = lift_map(p, tree, X, V);

  // Perturb the inputs at the interior nodes of the second root child's
  // subtree (leaves drive the shared conditional expectations, so they stay);
  // values on the first child's subtree must be untouched.
  AdaptedProcess X2 = X, V2 = V;
  for (int k = 1; k + 1 < tree.levels(); ++k)
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
      if (tree.ancestor(i, k - 1) == 1) {
        X2.at(k)(0, i) += 3.0;
        V2.at(k)(0, i) -= 2.0;
      }
  SolutionPair pert = lift_map(p, tree, X2, V2);
  for (int k = 1; k < tree.levels(); ++k)
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
      if (tree.ancestor(i, k - 1) == 0) {
        CHECK(pert.X.at(k)(0, i) == base.X.at(k)(0, i));
        CHECK(pert.V.at(k)(0, i) == base.V.at(k)(0, i));
      }
}

TEST_CASE("report invariants") {
  ScenarioTree tree = build_tree(1.0, 0.0, 6, 1);
  Problem p = riccati();
  PicardConfig cfg;
  auto [pair, report] = solve_local(p, tree, cfg);
  CHECK(report.converged);
  CHECK(report.distances.back() <= cfg.tol);
  for (double d : report.distances) CHECK(d >= 0.0);
  CHECK(report.contraction_ratios.size() + 1 == report.distances.size());
}
