#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fds/operators.hpp"

namespace fds {

/// Full system specification: dynamics, terminal condition, operator tuple,
/// initial data and declared constants.
struct Problem {
  int n = 1, d = 1, m = 1;
  CoefficientFn mu;     ///< n x 1, args (t, x, y, z1..z_p1, w)
  CoefficientFn sigma;  ///< n x m, args (t, x, y, z1..z_p2, w)
  CoefficientFn f;      ///< d x 1, args (t, x, y, z1..z_p3, w)
  TerminalSpec terminal;
  OperatorTuple ops;
  VectorXd x0;
  VectorXd v0;
  std::vector<double> alpha_v;  ///< per-step dV weights; empty means dt
  double lipschitz_C = 1.0;
  std::optional<double> gamma;
  std::optional<double> rho_C;

  int p1() const { return ops.L1.output_dim(d, m); }
  int p2() const { return ops.L2.output_dim(d, m); }
  int p3() const { return ops.L3.output_dim(d, m); }

  void validate(const ScenarioTree& tree) const;
  /// dV weight for the step starting at level k.
  double v_weight(const ScenarioTree& tree, int k) const;
};

struct PicardConfig {
  double tol = 1e-10;
  int max_iter = 200;
  int divergence_window = 5;
  /// Step weight toward the lifted pair. 0.5 suppresses the marginal
  /// oscillatory mode of mean-reverting drifts; the fixed point and the
  /// reported distances (‖lift(p) − p‖) do not depend on it.
  double relaxation = 0.5;
  std::optional<std::pair<AdaptedProcess, AdaptedProcess>> initial_guess;
};

struct PicardReport {
  bool converged = false;
  int iterations = 0;
  std::vector<double> distances;
  std::vector<double> contraction_ratios;
  double forward_residual = 0.0;
  double backward_residual = 0.0;
};

struct SolutionPair {
  AdaptedProcess X;
  AdaptedProcess V;
};

/// sqrt(s2(X)^2 + s2(V)^2), the product-space distance.
double pair_distance(const SolutionPair& a, const SolutionPair& b);

/// One application of the contraction map: explicit forward recursion for X
/// and the explicit dV integral, both driven by the operator processes of the
/// input pair.
SolutionPair lift_map(const Problem& problem, const ScenarioTree& tree,
                      const AdaptedProcess& X, const AdaptedProcess& V);

std::pair<SolutionPair, PicardReport> solve_local(const Problem& problem,
                                                  const ScenarioTree& tree,
                                                  const PicardConfig& cfg = {});

/// Max empirical contraction ratio of the map over random pairs.
double estimate_contraction(const Problem& problem, const ScenarioTree& tree,
                            int n_pairs, std::uint64_t seed);

}  // namespace fds
