#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "fds/verify.hpp"

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

SolutionPair random_pair(const ScenarioTree& tree, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  SolutionPair p;
  p.X = AdaptedProcess::zero(tree, 1);
  p.V = AdaptedProcess::zero(tree, 1);
  for (int k = 0; k < tree.levels(); ++k)
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      p.X.at(k)(0, i) = normal(rng);
      p.V.at(k)(0, i) = normal(rng);
    }
  return p;
}

}  // namespace

TEST_CASE("triple examples") {
  SUBCASE("zero problem: constant Y and M, zero Z") {
    ScenarioTree tree = build_tree(1.0, 0.0, 3, 1);
    Problem p = make_problem("0", "0", "0", "2.5", 1.0);
    auto [pair, report] = solve_local(p, tree, {});
    REQUIRE(report.converged);
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    for (int k = 0; k < tree.levels(); ++k) {
      CHECK((triple.Y.at(k).array() - 2.5).abs().maxCoeff() <= 1e-12);
      CHECK((triple.M.base.at(k).array() - 2.5).abs().maxCoeff() <= 1e-12);
      if (k < 3) CHECK(triple.M.Z[static_cast<size_t>(k)].cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("drift-free identity problem: Z = 1") {
    ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
    Problem p = make_problem("0", "1", "0", "x1", 0.0);
    auto [pair, report] = solve_local(p, tree, {});
    REQUIRE(report.converged);
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    for (int k = 0; k < 4; ++k)
      for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
        CHECK(triple.M.Z[static_cast<size_t>(k)](0, i) == doctest::Approx(1.0));
  }
  SUBCASE("representation at the root matches the two-point slope") {
    ScenarioTree tree = build_tree(1.0, 0.0, 2, 1);
    Problem p = riccati();
    auto [pair, report] = solve_local(p, tree, {});
    REQUIRE(report.converged);
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    const double sdt = tree.sqrt_dt();
    // Y differs from M by the deterministic-at-root V, so the slope of Y
    // across the two children recovers Z at the root.
    const double slope = (triple.Y.at(1)(0, 0) - triple.Y.at(1)(0, 1)) / (2 * sdt);
    CHECK(triple.M.Z[0](0, 0) == doctest::Approx(slope).epsilon(1e-10));
  }
}

TEST_CASE("backward residual is an algebraic identity") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  Problem p = make_problem("-y1", "1", "0.5*y1", "tanh(x1)", 1.0);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    SolutionPair pair = random_pair(tree, rng);
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    BackwardResiduals res = backward_residual(p, tree, triple, pair.V);
    CHECK(res.dynamics <= 1e-10);
    CHECK(res.terminal <= 1e-12);
  }
}

TEST_CASE("backward residual detects a corrupted node") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  Problem p = riccati();
  std::mt19937_64 rng(9);
  SolutionPair pair = random_pair(tree, rng);
  FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
  triple.Y.at(2)(0, 1) += 1.0;
  BackwardResiduals res = backward_residual(p, tree, triple, pair.V);
  CHECK(res.dynamics >= 1.0 - 1e-9);
}

TEST_CASE("forward residual") {
  SUBCASE("zero problem solution has residual 0") {
    ScenarioTree tree = build_tree(1.0, 0.0, 3, 1);
    Problem p = make_problem("0", "0", "0", "1", 0.5);
    auto [pair, report] = solve_local(p, tree, {});
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    CHECK(forward_residual(p, tree, triple) == 0.0);
  }
  SUBCASE("certified fixed point vs one-step iterate") {
    ScenarioTree tree = build_tree(1.0, 0.0, 8, 1);
    Problem p = riccati();
    PicardConfig cfg;
    auto [pair, report] = solve_local(p, tree, cfg);
    REQUIRE(report.converged);
    FbsdeTriple triple = to_fbsde_triple(p, tree, pair);
    CHECK(forward_residual(p, tree, triple) <= 1e-9);

    SolutionPair one = lift_map(p, tree, AdaptedProcess::constant(tree, p.x0),
                                AdaptedProcess::zero(tree, 1));
    FbsdeTriple rough = to_fbsde_triple(p, tree, one);
    CHECK(forward_residual(p, tree, rough) > 10 * cfg.tol);
  }
}

TEST_CASE("perturbations at desk scale are detected") {
  ScenarioTree tree = build_tree(1.0, 0.0, 5, 1);
  Problem p = riccati();
  PicardConfig cfg;
  auto [pair, report] = solve_local(p, tree, cfg);
  REQUIRE(report.converged);
  const double delta = 0.5;
  SUBCASE("X perturbation raises the forward residual") {
    SolutionPair bad = pair;
    bad.X.at(3)(0, 2) += delta;
    FbsdeTriple triple = to_fbsde_triple(p, tree, bad);
    CHECK(forward_residual(p, tree, triple) >= delta / 2);
  }
  SUBCASE("V perturbation raises the backward residual") {
    SolutionPair bad = pair;
    bad.V.at(3)(0, 2) += delta;
    FbsdeTriple triple = to_fbsde_triple(p, tree, bad);
    triple.Y.at(3)(0, 2) -= delta;  // keep Y as the original field
    BackwardResiduals res = backward_residual(p, tree, triple, bad.V);
    CHECK(res.dynamics >= delta / 2);
  }
}

TEST_CASE("A1 checker") {
  ScenarioTree tree = build_tree(1.0, 0.0, 3, 1);
  SUBCASE("the linear mean-reverting family passes") {
    AssumptionReport rep = check_A1(riccati(), tree, 200, 12345);
    CHECK(rep.pass);
    for (const auto& c : rep.conditions)
      if (!c.informational) CHECK(c.pass);
  }
  SUBCASE("cubic decreasing drift: monotone yes, x-Lipschitz no") {
    Problem p = make_problem("-x1^3", "1", "0", "x1", 1.0);
    AssumptionReport rep = check_A1(p, tree, 200, 2);
    const ConditionResult* mono = rep.find("mu_monotone_x");
    const ConditionResult* lipx = rep.find("mu_lipschitz_x");
    REQUIRE(mono);
    REQUIRE(lipx);
    CHECK(mono->pass);
    CHECK_FALSE(lipx->pass);
    CHECK(lipx->informational);
  }
  SUBCASE("quadratic integrand fails the declared constant") {
    Problem p = make_problem("0", "1", "x1^2", "x1", 1.0);
    AssumptionReport rep = check_A1(p, tree, 200, 3);
    const ConditionResult* flip = rep.find("f_lipschitz");
    REQUIRE(flip);
    CHECK_FALSE(flip->pass);
    CHECK_FALSE(rep.pass);
  }
  SUBCASE("deterministic per seed") {
    AssumptionReport a = check_A1(riccati(), tree, 100, 777);
    AssumptionReport b = check_A1(riccati(), tree, 100, 777);
    REQUIRE(a.conditions.size() == b.conditions.size());
    for (size_t i = 0; i < a.conditions.size(); ++i)
      CHECK(a.conditions[i].max_violation == b.conditions[i].max_violation);
  }
}

TEST_CASE("A2 checker") {
  ScenarioTree tree = build_tree(1.0, 0.0, 3, 1);
  SUBCASE("z-free and y-free coefficients pass for any gamma") {
    Problem p = make_problem("x1", "1 + 0.5*x1", "x1", "x1", 1.0);
    p.gamma = 5.0;
    AssumptionReport rep = check_A2(p, tree, 8, 50, 1);
    CHECK(rep.pass);
  }
  SUBCASE("mean-reverting drift passes") {
    Problem p = riccati();
    p.gamma = 0.5;
    AssumptionReport rep = check_A2(p, tree, 8, 50, 1);
    CHECK(rep.pass);
  }
  SUBCASE("mean-amplifying drift fails") {
    Problem p = make_problem("y1", "1", "0", "x1", 1.0);
    p.gamma = 0.5;
    AssumptionReport rep = check_A2(p, tree, 8, 50, 1);
    CHECK_FALSE(rep.pass);
  }
  SUBCASE("outside the stated scope") {
    Problem p = riccati();
    p.gamma = 0.5;
    p.n = 2;
    p.mu = CoefficientFn::from_strings({"-y1", "0"}, 2, 1);
    p.sigma = CoefficientFn::from_strings({"1", "1"}, 2, 1);
    p.x0 = VectorXd::Zero(2);
    CHECK_THROWS_AS(check_A2(p, tree, 4, 10, 1), ScopeViolation);

    Problem q = riccati();
    q.gamma = 0.5;
    q.sigma = CoefficientFn::from_strings({"z1"}, 1, 1);
    CHECK_THROWS_AS(check_A2(q, tree, 4, 10, 1), ScopeViolation);
  }
}

TEST_CASE("Y/M Lipschitz certificate across terminal families") {
  ScenarioTree tree = build_tree(1.0, 0.0, 4, 1);
  struct Fam {
    const char* src;
    double C;
  };
  for (Fam fam : {Fam{"1", 0.0}, Fam{"x1", 1.0}, Fam{"0.5*abs(x1)", 0.5},
                  Fam{"min(max(x1, -1), 1)", 1.0}}) {
    TerminalSpec phi = TerminalSpec::pointwise({fam.src}, fam.C);
    AssumptionReport rep = check_ym_lipschitz(tree, phi, 1, 1000, 31337);
    CHECK(rep.pass);
    for (const auto& c : rep.conditions) CHECK(c.max_violation == 0.0);
  }
}
