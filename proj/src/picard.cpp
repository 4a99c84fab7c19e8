#include "fds/picard.hpp"

#include <cmath>
#include <random>

namespace fds {

void Problem::validate(const ScenarioTree& tree) const {
  if (n < 1 || d < 1 || m < 1) throw ValidationError("dimensions must be >= 1");
  if (m != tree.brownian_dim())
    throw ValidationError("problem and tree disagree on the walk dimension");
  if (mu.rows != n || mu.cols != 1) throw ValidationError("mu must be n x 1");
  if (sigma.rows != n || sigma.cols != m) throw ValidationError("sigma must be n x m");
  if (f.rows != d || f.cols != 1) throw ValidationError("f must be d x 1");
  if (terminal.dim != d) throw ValidationError("terminal must be d-dimensional");
  if (x0.size() != n) throw ValidationError("x0 must have size n");
  if (v0.size() != d) throw ValidationError("v0 must have size d");
  ops.validate();
  mu.check_signature(n, d, p1(), m);
  sigma.check_signature(n, d, p2(), m);
  f.check_signature(n, d, p3(), m);
  if (terminal.kind != TerminalSpec::Kind::Callback)
    for (const auto& e : terminal.exprs)
      if (e.max_index(VarSlot::X) > n || e.max_index(VarSlot::Y) > 0 ||
          e.max_index(VarSlot::Z) > 0 || e.max_index(VarSlot::W) > m)
        throw ValidationError("terminal may reference only t, x and w");
  if (!alpha_v.empty() &&
      static_cast<int>(alpha_v.size()) != tree.grid().steps)
    throw ValidationError("alpha_v must provide one weight per step");
}

double Problem::v_weight(const ScenarioTree& tree, int k) const {
  return alpha_v.empty() ? tree.grid().dt : alpha_v[static_cast<size_t>(k)];
}

double pair_distance(const SolutionPair& a, const SolutionPair& b) {
  const double dx = s2_norm(a.X - b.X);
  const double dv = s2_norm(a.V - b.V);
  return std::sqrt(dx * dx + dv * dv);
}

SolutionPair lift_map(const Problem& problem, const ScenarioTree& tree,
                      const AdaptedProcess& X, const AdaptedProcess& V) {
  const int N = tree.grid().steps;
  const int b = tree.branching();
  const double dt = tree.grid().dt;

  MartingaleProcess M = apply_M(tree, problem.terminal, X, V);
  AdaptedProcess Y = M.base - V;
  LProcess L1 = apply_L(problem.ops.L1, M);
  LProcess L2 = apply_L(problem.ops.L2, M);
  LProcess L3 = apply_L(problem.ops.L3, M);

  SolutionPair out;
  out.X = AdaptedProcess::zero(tree, problem.n);
  out.V = AdaptedProcess::zero(tree, problem.d);
  out.X.at(0).col(0) = problem.x0;
  out.V.at(0).col(0) = problem.v0;

  VectorXd dw(problem.m);
  for (int k = 0; k < N; ++k) {
    const double weight = problem.v_weight(tree, k);
    EvalEnv env;
    env.t = tree.grid().time(k);
    env.dt = dt;
    env.n = problem.n;
    env.d = problem.d;
    env.m = problem.m;
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      env.x = out.X.at(k).col(i).data();
      env.y = Y.at(k).col(i).data();
      env.w = tree.walk(k).col(i).data();

      env.z = L1.values.at(k).col(i).data();
      env.p = problem.p1();
      MatrixXd drift = problem.mu.eval(env) * dt;

      env.z = L2.values.at(k).col(i).data();
      env.p = problem.p2();
      MatrixXd vol = problem.sigma.eval(env);

      env.z = L3.values.at(k).col(i).data();
      env.p = problem.p3();
      MatrixXd dv = problem.f.eval(env) * weight;

      for (int c = 0; c < b; ++c) {
        const std::int64_t ch = tree.child(i, c);
        for (int j = 0; j < problem.m; ++j) dw(j) = tree.walk_increment(c, j);
        out.X.at(k + 1).col(ch) = out.X.at(k).col(i) + drift.col(0) + vol * dw;
        out.V.at(k + 1).col(ch) = out.V.at(k).col(i) + dv.col(0);
      }
    }
    if (!out.X.at(k + 1).allFinite() || !out.V.at(k + 1).allFinite())
      throw NonFinite("non-finite state at level " + std::to_string(k + 1));
  }
  return out;
}

std::pair<SolutionPair, PicardReport> solve_local(const Problem& problem,
                                                  const ScenarioTree& tree,
                                                  const PicardConfig& cfg) {
  problem.validate(tree);
  if (cfg.tol <= 0.0 || cfg.max_iter < 1)
    throw ValidationError("picard config: tol > 0 and max_iter >= 1 required");
  if (cfg.relaxation <= 0.0 || cfg.relaxation > 1.0)
    throw ValidationError("picard config: relaxation in (0, 1] required");

  SolutionPair cur;
  if (cfg.initial_guess) {
    cur.X = cfg.initial_guess->first;
    cur.V = cfg.initial_guess->second;
  } else {
    cur.X = AdaptedProcess::constant(tree, problem.x0);
    cur.V = AdaptedProcess::constant(tree, problem.v0);
  }

  const double omega = cfg.relaxation;
  PicardReport report;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    SolutionPair lifted = lift_map(problem, tree, cur.X, cur.V);
    const double dist = pair_distance(lifted, cur);
    if (!report.distances.empty() && report.distances.back() > 0.0)
      report.contraction_ratios.push_back(dist / report.distances.back());
    report.distances.push_back(dist);
    report.iterations = it;

    if (dist <= cfg.tol) {
      report.converged = true;
      report.forward_residual = s2_norm(lifted.X - cur.X);
      report.backward_residual = s2_norm(lifted.V - cur.V);
      return {std::move(cur), std::move(report)};
    }

    const int w = cfg.divergence_window;
    if (static_cast<int>(report.contraction_ratios.size()) >= w &&
        report.distances.back() >= report.distances.front() * (1.0 - 1e-9)) {
      double log_sum = 0.0;
      for (int j = 0; j < w; ++j)
        log_sum += std::log(
            report.contraction_ratios[report.contraction_ratios.size() - 1 - j]);
      // A stalled residual (ratio pinned at 1) is the discrete signature of a
      // system without a fixed point; count it as divergence.
      if (log_sum / w > -1e-9)
        throw NonContractive("picard iteration diverges (geometric-mean ratio " +
                             std::to_string(std::exp(log_sum / w)) + " over last " +
                             std::to_string(w) + " steps)");
    }

    for (size_t k = 0; k < cur.X.levels.size(); ++k) {
      cur.X.levels[k] = (1.0 - omega) * cur.X.levels[k] + omega * lifted.X.levels[k];
      cur.V.levels[k] = (1.0 - omega) * cur.V.levels[k] + omega * lifted.V.levels[k];
    }
  }
  throw MaxIterExceeded("no fixed point within " + std::to_string(cfg.max_iter) +
                        " iterations (last distance " +
                        std::to_string(report.distances.back()) + ")");
}

double estimate_contraction(const Problem& problem, const ScenarioTree& tree,
                            int n_pairs, std::uint64_t seed) {
  if (n_pairs < 1) throw ValidationError("estimate_contraction needs pairs");
  problem.validate(tree);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto random_pair = [&]() {
    SolutionPair p;
    p.X = AdaptedProcess::constant(tree, problem.x0);
    p.V = AdaptedProcess::constant(tree, problem.v0);
    for (int k = 0; k < tree.levels(); ++k) {
      for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
        for (int r = 0; r < problem.n; ++r) p.X.at(k)(r, i) += normal(rng);
        for (int r = 0; r < problem.d; ++r) p.V.at(k)(r, i) += normal(rng);
      }
    }
    return p;
  };

  double worst = 0.0;
  for (int s = 0; s < n_pairs; ++s) {
    SolutionPair a = random_pair();
    SolutionPair b = random_pair();
    const double denom = pair_distance(a, b);
    if (denom == 0.0) continue;  // degenerate pair
    SolutionPair la = lift_map(problem, tree, a.X, a.V);
    SolutionPair lb = lift_map(problem, tree, b.X, b.V);
    worst = std::max(worst, pair_distance(la, lb) / denom);
  }
  return worst;
}

}  // namespace fds
