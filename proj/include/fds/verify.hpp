#pragma once

#include <string>
#include <vector>

#include "fds/picard.hpp"

namespace fds {

/// Solution of the forward-backward dynamics recovered from a pair (X, V).
struct FbsdeTriple {
  AdaptedProcess X;
  AdaptedProcess Y;
  MartingaleProcess M;
};

FbsdeTriple to_fbsde_triple(const Problem& problem, const ScenarioTree& tree,
                            const SolutionPair& sol);

struct BackwardResiduals {
  double dynamics = 0.0;  ///< max |dY + dV - dM| over branches
  double terminal = 0.0;  ///< max |Y_T - terminal(X)| over leaves
};

/// Certifies the semimartingale decomposition dY = dM - dV (where dV carries
/// the f-integral of the system) and the terminal identity Y_T = phi(X_T).
BackwardResiduals backward_residual(const Problem& problem, const ScenarioTree& tree,
                                    const FbsdeTriple& triple, const AdaptedProcess& V);

/// max |dX - mu dt - sigma dW| with coefficients evaluated on the triple;
/// small iff the pair is a fixed point of the contraction map.
double forward_residual(const Problem& problem, const ScenarioTree& tree,
                        const FbsdeTriple& triple);

struct ConditionResult {
  std::string name;
  double max_violation = 0.0;
  int samples = 0;
  bool pass = true;
  bool informational = false;  ///< reported but not counted in the verdict
};

struct AssumptionReport {
  std::vector<ConditionResult> conditions;
  bool pass = true;

  void add(ConditionResult c);
  const ConditionResult* find(const std::string& name) const;
};

/// Sampled certificate for the monotonicity / Lipschitz / growth conditions
/// on mu, sigma, f and phi against the declared constant C.
AssumptionReport check_A1(const Problem& problem, const ScenarioTree& tree,
                          int n_samples, std::uint64_t seed);

/// Sampled certificate for the sign condition Lambda1(y) <= -gamma |Lambda2(y)|
/// on the unit sphere, with derivatives taken by central differences.
/// Requires n = 1, sigma free of z, and Ito operators.
AssumptionReport check_A2(const Problem& problem, const ScenarioTree& tree,
                          int n_y_samples, int n_state_samples, std::uint64_t seed);

/// Sampled certificate for the operator estimates
///   |dM| <= 2C |dX| + 2 |dV|,   |dY| <= 2C |dX| + 3 |dV|   (S^2 norms).
AssumptionReport check_ym_lipschitz(const ScenarioTree& tree,
                                    const TerminalSpec& terminal, int x_dim,
                                    int n_pairs, std::uint64_t seed);

}  // namespace fds
