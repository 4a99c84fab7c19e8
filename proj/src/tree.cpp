#include "fds/tree.hpp"

#include <cmath>

namespace fds {

namespace {

double pairwise_sum(const double* data, std::int64_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  const std::int64_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

}  // namespace

double pairwise_mean(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return 0.0;
  Eigen::VectorXd tmp = v;  // contiguous
  return pairwise_sum(tmp.data(), tmp.size()) / static_cast<double>(tmp.size());
}

TimeGrid make_grid(double T, double tau, int steps) {
  if (!(T > tau) || tau < 0.0 || steps < 1)
    throw InvalidGrid("require T > tau >= 0 and steps >= 1");
  TimeGrid g;
  g.T = T;
  g.tau = tau;
  g.steps = steps;
  g.dt = (T - tau) / steps;
  g.times.resize(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) g.times[static_cast<size_t>(k)] = tau + k * g.dt;
  g.times.front() = tau;
  g.times.back() = T;
  return g;
}

ScenarioTree::ScenarioTree(TimeGrid grid, int m, VectorXd root_w, std::int64_t node_cap)
    : grid_(std::move(grid)), m_(m), branching_(1 << m), sqrt_dt_(std::sqrt(grid_.dt)) {
  if (m < 1) throw InvalidGrid("brownian dimension must be >= 1");
  counts_.resize(static_cast<size_t>(grid_.steps) + 1);
  std::int64_t count = 1;
  std::int64_t total = 0;
  for (int k = 0; k <= grid_.steps; ++k) {
    counts_[static_cast<size_t>(k)] = count;
    total += count;
    if (total > node_cap)
      throw BudgetExceeded("tree would exceed node cap of " + std::to_string(node_cap));
    if (k < grid_.steps) count *= branching_;
  }
  walk_.resize(static_cast<size_t>(grid_.steps) + 1);
  walk_[0] = root_w;
  for (int k = 0; k < grid_.steps; ++k) {
    const MatrixXd& cur = walk_[static_cast<size_t>(k)];
    MatrixXd next(m_, counts_[static_cast<size_t>(k + 1)]);
    for (std::int64_t i = 0; i < cur.cols(); ++i) {
      for (int c = 0; c < branching_; ++c) {
        auto col = next.col(i * branching_ + c);
        for (int j = 0; j < m_; ++j)
          col(j) = cur(j, i) + walk_increment(c, j);
      }
    }
    walk_[static_cast<size_t>(k + 1)] = std::move(next);
  }
}

std::int64_t ScenarioTree::ancestor(std::int64_t node, int up) const {
  for (int k = 0; k < up; ++k) node /= branching_;
  return node;
}

ScenarioTree build_tree(double T, double tau, int steps, int m, std::int64_t node_cap) {
  return ScenarioTree(make_grid(T, tau, steps), m, VectorXd::Zero(m), node_cap);
}

ScenarioTree build_subtree(double T, double tau, int steps, int m,
                           const VectorXd& root_w, std::int64_t node_cap) {
  if (root_w.size() != m) throw DimensionMismatch("root walk value has wrong size");
  return ScenarioTree(make_grid(T, tau, steps), m, root_w, node_cap);
}

AdaptedProcess AdaptedProcess::zero(const ScenarioTree& tree, int dim) {
  AdaptedProcess p;
  p.tree = &tree;
  p.dim = dim;
  p.levels.resize(static_cast<size_t>(tree.levels()));
  for (int k = 0; k < tree.levels(); ++k)
    p.levels[static_cast<size_t>(k)] = MatrixXd::Zero(dim, tree.nodes_at(k));
  return p;
}

AdaptedProcess AdaptedProcess::constant(const ScenarioTree& tree, const VectorXd& value) {
  AdaptedProcess p = zero(tree, static_cast<int>(value.size()));
  for (auto& lvl : p.levels) lvl.colwise() += value;
  return p;
}

AdaptedProcess operator-(const AdaptedProcess& a, const AdaptedProcess& b) {
  if (a.dim != b.dim || a.tree != b.tree)
    throw DimensionMismatch("process difference: mismatched processes");
  AdaptedProcess r = a;
  for (size_t k = 0; k < r.levels.size(); ++k) r.levels[k] -= b.levels[k];
  return r;
}

AdaptedProcess operator+(const AdaptedProcess& a, const AdaptedProcess& b) {
  if (a.dim != b.dim || a.tree != b.tree)
    throw DimensionMismatch("process sum: mismatched processes");
  AdaptedProcess r = a;
  for (size_t k = 0; k < r.levels.size(); ++k) r.levels[k] += b.levels[k];
  return r;
}

std::vector<MatrixXd> conditional_expectation_all(const ScenarioTree& tree,
                                                  const MatrixXd& terminal) {
  if (terminal.cols() != tree.leaves())
    throw DimensionMismatch("terminal values must cover all leaves");
  const int N = tree.grid().steps;
  const int b = tree.branching();
  std::vector<MatrixXd> out(static_cast<size_t>(N) + 1);
  out[static_cast<size_t>(N)] = terminal;
  for (int k = N - 1; k >= 0; --k) {
    const MatrixXd& fine = out[static_cast<size_t>(k + 1)];
    MatrixXd coarse(terminal.rows(), tree.nodes_at(k));
    for (std::int64_t i = 0; i < coarse.cols(); ++i) {
      coarse.col(i) = fine.middleCols(i * b, b).rowwise().sum() / b;
    }
    out[static_cast<size_t>(k)] = std::move(coarse);
  }
  return out;
}

MatrixXd conditional_expectation(const ScenarioTree& tree, const MatrixXd& terminal,
                                 int level) {
  if (level < 0 || level >= tree.levels())
    throw DimensionMismatch("level out of range");
  return conditional_expectation_all(tree, terminal)[static_cast<size_t>(level)];
}

MartingaleProcess martingale_from_terminal(const ScenarioTree& tree, const MatrixXd& xi) {
  const int N = tree.grid().steps;
  const int b = tree.branching();
  const int m = tree.brownian_dim();
  const int d = static_cast<int>(xi.rows());
  const double dt = tree.grid().dt;

  MartingaleProcess M;
  M.base.tree = &tree;
  M.base.dim = d;
  M.base.levels = conditional_expectation_all(tree, xi);
  M.Z.resize(static_cast<size_t>(N));
  M.Nres = AdaptedProcess::zero(tree, d);
  M.qv = AdaptedProcess::zero(tree, 1);
  M.qv_nres = AdaptedProcess::zero(tree, 1);

  // Increment pattern of the walk over one step, m x b; over the uniform
  // branch measure dW dW^T = b*dt*I exactly, so the least-squares solve for
  // Z is a plain projection.
  MatrixXd dW(m, b);
  for (int c = 0; c < b; ++c)
    for (int j = 0; j < m; ++j) dW(j, c) = tree.walk_increment(c, j);

  for (int k = 0; k < N; ++k) {
    const MatrixXd& cur = M.base.at(k);
    const MatrixXd& next = M.base.at(k + 1);
    MatrixXd& Zk = M.Z[static_cast<size_t>(k)];
    Zk.resize(d * m, tree.nodes_at(k));
    for (std::int64_t i = 0; i < cur.cols(); ++i) {
      MatrixXd dM = next.middleCols(i * b, b);
      dM.colwise() -= cur.col(i);
      MatrixXd Zi = dM * dW.transpose() / (b * dt);  // d x m
      MatrixXd dN = dM - Zi * dW;
      for (int r = 0; r < d; ++r)
        for (int j = 0; j < m; ++j) Zk(r * m + j, i) = Zi(r, j);
      double dqv = dM.squaredNorm() / b;
      double dqv_n = dN.squaredNorm() / b;
      for (int c = 0; c < b; ++c) {
        const std::int64_t ch = tree.child(i, c);
        M.Nres.at(k + 1).col(ch) = M.Nres.at(k).col(i) + dN.col(c);
        M.qv.at(k + 1)(0, ch) = M.qv.at(k)(0, i) + dqv;
        M.qv_nres.at(k + 1)(0, ch) = M.qv_nres.at(k)(0, i) + dqv_n;
      }
    }
  }
  return M;
}

double s2_norm(const AdaptedProcess& p) {
  const ScenarioTree& tree = *p.tree;
  const int N = tree.grid().steps;
  const int b = tree.branching();
  Eigen::VectorXd maxsq = p.at(0).colwise().squaredNorm().transpose();
  for (int k = 1; k <= N; ++k) {
    Eigen::VectorXd sq = p.at(k).colwise().squaredNorm().transpose();
    Eigen::VectorXd next(tree.nodes_at(k));
    for (std::int64_t i = 0; i < next.size(); ++i)
      next(i) = std::max(maxsq(i / b), sq(i));
    maxsq = std::move(next);
  }
  return std::sqrt(pairwise_mean(maxsq));
}

double h2_norm(const AdaptedProcess& p) {
  const ScenarioTree& tree = *p.tree;
  const double dt = tree.grid().dt;
  double acc = 0.0;
  for (int k = 0; k < tree.grid().steps; ++k) {
    Eigen::VectorXd sq = p.at(k).colwise().squaredNorm().transpose();
    acc += dt * pairwise_mean(sq);
  }
  return std::sqrt(acc);
}

double l2_norm_at(const AdaptedProcess& p, int level) {
  Eigen::VectorXd sq = p.at(level).colwise().squaredNorm().transpose();
  return std::sqrt(pairwise_mean(sq));
}

AdaptedProcess predictable_qv(const MartingaleProcess& M) { return M.qv; }

}  // namespace fds
