#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "fds/expr.hpp"
#include "fds/tree.hpp"

namespace fds {

/// Terminal condition: a pointwise function of X_T, a path functional of the
/// whole trajectory, or a per-leaf callback (used by the interval stitching).
struct TerminalSpec {
  enum class Kind { Pointwise, PathSup, PathIntegral, Callback };

  Kind kind = Kind::Pointwise;
  int dim = 1;                  ///< d, output dimension
  std::vector<Expr> exprs;      ///< one per component (Pointwise/Path*)
  double lipschitz = 1.0;       ///< declared constant C'
  std::function<VectorXd(std::int64_t leaf, const VectorXd& x_terminal)> callback;

  static TerminalSpec pointwise(const std::vector<std::string>& srcs,
                                double lipschitz);
  static TerminalSpec path_sup(const std::vector<std::string>& srcs, double lipschitz);
  static TerminalSpec path_integral(const std::vector<std::string>& srcs,
                                    double lipschitz);

  /// Per-leaf terminal values, dim x leaves.
  MatrixXd apply(const ScenarioTree& tree, const AdaptedProcess& X) const;
};

enum class OperatorVariant { Ito, Identity, CondQV, RunningQV, ResidualQV, Delayed };

/// One abstract operator on martingales, with its declared Lipschitz bound.
struct OperatorKind {
  OperatorVariant variant = OperatorVariant::Ito;
  OperatorVariant base = OperatorVariant::Ito;  ///< underlying variant for Delayed
  std::vector<std::pair<int, double>> alpha_z;  ///< (offset in steps <= 0, weight)
  double K = 1.0;
  std::shared_ptr<const MartingaleProcess> Mref;  ///< for ResidualQV

  /// Output dimension p for martingale dimension d and walk dimension m.
  int output_dim(int d, int m) const;
  /// True if the output lives in H^2 (integrand norm), false for S^2.
  bool h2_valued() const;
};

/// Output of an L operator; levels beyond the predictable range are zero for
/// H^2-valued variants.
struct LProcess {
  AdaptedProcess values;
  bool h2 = false;
};

struct OperatorTuple {
  OperatorKind L1, L2, L3;

  /// L2 must be S^2-valued (the counterexample shows why).
  void validate() const;
};

MartingaleProcess apply_M(const ScenarioTree& tree, const TerminalSpec& terminal,
                          const AdaptedProcess& X, const AdaptedProcess& V);
AdaptedProcess apply_Y(const ScenarioTree& tree, const TerminalSpec& terminal,
                       const AdaptedProcess& X, const AdaptedProcess& V);

LProcess apply_L(const OperatorKind& kind, const MartingaleProcess& M);

double operator_norm(const LProcess& L);

struct L1Report {
  int samples = 0;
  double max_boundedness_ratio = 0.0;
  double max_lipschitz_ratio = 0.0;
  double declared_K = 0.0;
  bool pass = false;
};

/// Sampling certificate for boundedness / Lipschitz continuity of an
/// operator against its declared constant. Martingales are generated from
/// seeded standard-normal leaf values.
L1Report check_L1(const OperatorKind& kind, const ScenarioTree& tree, int d,
                  int n_samples, std::uint64_t seed);

}  // namespace fds
