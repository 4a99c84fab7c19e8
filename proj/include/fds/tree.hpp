#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fds/errors.hpp"

namespace fds {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Uniform time grid on [tau, T] with N steps.
struct TimeGrid {
  double T = 1.0;
  double tau = 0.0;
  int steps = 1;
  double dt = 1.0;
  std::vector<double> times;

  double time(int level) const { return times[static_cast<size_t>(level)]; }
};

/// Exact discrete filtered probability space: a non-recombining tree whose
/// driving walk moves each coordinate by +-sqrt(dt) per step. Level k has
/// branching^k nodes; children of node i are i*b .. i*b + b - 1.
class ScenarioTree {
 public:
  ScenarioTree(TimeGrid grid, int m, VectorXd root_w, std::int64_t node_cap);

  const TimeGrid& grid() const { return grid_; }
  int brownian_dim() const { return m_; }
  int branching() const { return branching_; }
  int levels() const { return grid_.steps + 1; }
  std::int64_t nodes_at(int level) const { return counts_[static_cast<size_t>(level)]; }
  std::int64_t leaves() const { return counts_.back(); }
  double branch_prob() const { return 1.0 / branching_; }
  double sqrt_dt() const { return sqrt_dt_; }

  /// Walk values, m rows x nodes_at(level) columns.
  const MatrixXd& walk(int level) const { return walk_[static_cast<size_t>(level)]; }

  /// Increment of coordinate j along branch c: +-sqrt(dt) by the sign bit.
  double walk_increment(int branch, int coord) const {
    return ((branch >> coord) & 1) ? -sqrt_dt_ : sqrt_dt_;
  }

  std::int64_t child(std::int64_t node, int branch) const {
    return node * branching_ + branch;
  }
  std::int64_t parent(std::int64_t node) const { return node / branching_; }

  /// Ancestor of a node `down` levels up the tree.
  std::int64_t ancestor(std::int64_t node, int up) const;

 private:
  TimeGrid grid_;
  int m_;
  int branching_;
  double sqrt_dt_;
  std::vector<std::int64_t> counts_;
  std::vector<MatrixXd> walk_;
};

TimeGrid make_grid(double T, double tau, int steps);

/// Root walk value zero; throws InvalidGrid / BudgetExceeded.
ScenarioTree build_tree(double T, double tau, int steps, int m,
                        std::int64_t node_cap = (std::int64_t{1} << 24));

/// Subtree space rooted at a node with known walk value (used by the
/// interval-stitching construction; filtration continues from root_w).
ScenarioTree build_subtree(double T, double tau, int steps, int m,
                           const VectorXd& root_w,
                           std::int64_t node_cap = (std::int64_t{1} << 24));

/// Node-indexed process values; dim rows x nodes_at(level) columns per level.
struct AdaptedProcess {
  const ScenarioTree* tree = nullptr;
  int dim = 0;
  std::vector<MatrixXd> levels;

  static AdaptedProcess zero(const ScenarioTree& tree, int dim);
  static AdaptedProcess constant(const ScenarioTree& tree, const VectorXd& value);

  const MatrixXd& at(int level) const { return levels[static_cast<size_t>(level)]; }
  MatrixXd& at(int level) { return levels[static_cast<size_t>(level)]; }
};

AdaptedProcess operator-(const AdaptedProcess& a, const AdaptedProcess& b);
AdaptedProcess operator+(const AdaptedProcess& a, const AdaptedProcess& b);

/// Martingale with its nodewise representation against the walk: increments
/// split as dM = Z dW + dN with N orthogonal to every walk coordinate under
/// the branch measure, plus the predictable quadratic variation (scalar trace).
struct MartingaleProcess {
  AdaptedProcess base;
  /// Z at level k: (dim*m) rows x nodes columns, Z(i,j) stored row-major
  /// as rows i*m+j; defined on levels 0..N-1.
  std::vector<MatrixXd> Z;
  AdaptedProcess Nres;
  AdaptedProcess qv;        ///< scalar trace of <M>, nondecreasing, 0 at root
  AdaptedProcess qv_nres;   ///< <Nres>, for the isometry split

  const ScenarioTree& tree() const { return *base.tree; }
};

/// Probability-weighted average of leaf values at every level; the tower
/// property holds exactly by construction (child averages, fixed order).
std::vector<MatrixXd> conditional_expectation_all(const ScenarioTree& tree,
                                                  const MatrixXd& terminal);
MatrixXd conditional_expectation(const ScenarioTree& tree, const MatrixXd& terminal,
                                 int level);

MartingaleProcess martingale_from_terminal(const ScenarioTree& tree,
                                           const MatrixXd& xi);

/// sqrt(E[sup_levels |value|^2]).
double s2_norm(const AdaptedProcess& p);

/// sqrt(E[sum over non-terminal levels |value|^2 dt]).
double h2_norm(const AdaptedProcess& p);

/// sqrt(E[|value at level|^2]).
double l2_norm_at(const AdaptedProcess& p, int level);

AdaptedProcess predictable_qv(const MartingaleProcess& M);

/// Deterministic pairwise mean over node index order.
double pairwise_mean(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace fds
