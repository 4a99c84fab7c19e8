#include "fds/global.hpp"

#include <cmath>

#include "fds/operators.hpp"

namespace fds {

namespace {

void check_scope(const Problem& problem) {
  if (problem.n != 1)
    throw ScopeViolation("interval stitching requires n = 1");
  if (problem.ops.L1.variant != OperatorVariant::Ito ||
      problem.ops.L3.variant != OperatorVariant::Ito)
    throw ScopeViolation("interval stitching requires integrand operators");
  for (const auto& e : problem.sigma.exprs)
    if (e.max_index(VarSlot::Z) > 0)
      throw ScopeViolation("sigma must not depend on z");
  if (problem.terminal.kind != TerminalSpec::Kind::Pointwise)
    throw ScopeViolation("interval stitching requires a pointwise terminal");
}

/// Y at the subtree root for a solved piece: E[xi + V_T] - V_root.
VectorXd root_y(const ScenarioTree& sub, const TerminalSpec& terminal,
                const SolutionPair& sol) {
  MatrixXd xi = terminal.apply(sub, sol.X) + sol.V.at(sub.grid().steps);
  VectorXd y(xi.rows());
  for (int r = 0; r < xi.rows(); ++r) y(r) = pairwise_mean(xi.row(r).transpose());
  return y - sol.V.at(0).col(0);
}

struct PieceStats {
  int iterations = 0;
  double contraction = 0.0;
};

void absorb(PieceStats& stats, const PicardReport& report) {
  stats.iterations = std::max(stats.iterations, report.iterations);
  if (!report.contraction_ratios.empty())
    stats.contraction = std::max(stats.contraction, report.contraction_ratios.back());
}

}  // namespace

Partition build_partition(const TimeGrid& grid, double max_len) {
  if (max_len < grid.dt)
    throw ValidationError("max_len must be at least one time step");
  const int steps_per = std::max(
      1, static_cast<int>(std::floor(max_len / grid.dt + 1e-9)));
  const int count = (grid.steps + steps_per - 1) / steps_per;
  Partition part;
  part.max_len = max_len;
  for (int i = 0; i <= count; ++i) {
    const int level = static_cast<int>(
        std::llround(static_cast<double>(i) * grid.steps / count));
    part.levels.push_back(level);
    part.boundaries.push_back(grid.time(level));
  }
  return part;
}

VectorXd TerminalMap::eval(std::int64_t node, double x) const {
  const MatrixXd& table = tables[static_cast<size_t>(node)];
  const double clamped = std::min(std::max(x, x_lo), x_hi);
  const double pos = (clamped - x_lo) / cell();
  const int g = std::min(static_cast<int>(pos), grid_n - 2);
  const double frac = pos - g;
  return table.col(g) * (1.0 - frac) + table.col(g + 1) * frac;
}

double TerminalMap::measure_lipschitz() const {
  double worst = 0.0;
  for (const auto& table : tables)
    for (int g = 0; g + 1 < grid_n; ++g)
      worst = std::max(worst, (table.col(g + 1) - table.col(g)).norm() / cell());
  return worst;
}

void GlobalConfig::validate() const {
  if (!(x_lo < x_hi)) throw ValidationError("x grid: lo < hi required");
  if (x_grid_n < 3) throw ValidationError("x grid needs at least 3 points");
  if (min_len <= 0.0 || max_len < min_len)
    throw ValidationError("require 0 < min_len <= max_len");
}

std::pair<double, double> default_x_range(const Problem& problem,
                                          const ScenarioTree& tree) {
  const double T = tree.grid().T;
  // Sample a volatility bound at the initial state.
  VectorXd zero_y = VectorXd::Zero(problem.d);
  VectorXd zero_z = VectorXd::Zero(problem.p2());
  VectorXd w0 = VectorXd::Zero(problem.m);
  EvalEnv env;
  env.t = tree.grid().tau;
  env.dt = tree.grid().dt;
  env.x = problem.x0.data();
  env.n = problem.n;
  env.y = zero_y.data();
  env.d = problem.d;
  env.z = zero_z.data();
  env.p = problem.p2();
  env.w = w0.data();
  env.m = problem.m;
  double bound = 1.0;
  try {
    bound += problem.sigma.eval(env).norm();
  } catch (const Error&) {
  }
  const double half = 6.0 * std::sqrt(T) * bound;
  return {problem.x0(0) - half, problem.x0(0) + half};
}

double zhang_chain(double lipschitz, double rho, double interval_len) {
  return std::sqrt((lipschitz * lipschitz + 1.0) * std::exp(rho * interval_len) - 1.0);
}

namespace {

struct StitchContext {
  const Problem& problem;
  const ScenarioTree& tree;
  const GlobalConfig& cfg;
  const Partition& part;

  Problem sub_problem(int i, const std::vector<TerminalMap>& thetas,
                      std::int64_t base_node, double x_start,
                      const VectorXd& v_start) const {
    const int lo = part.levels[static_cast<size_t>(i - 1)];
    const int hi = part.levels[static_cast<size_t>(i)];
    Problem sub = problem;
    sub.x0 = VectorXd::Constant(1, x_start);
    sub.v0 = v_start;
    if (!problem.alpha_v.empty())
      sub.alpha_v.assign(problem.alpha_v.begin() + lo, problem.alpha_v.begin() + hi);
    if (i < part.count()) {
      const TerminalMap* theta = &thetas[static_cast<size_t>(i)];
      const std::int64_t stride = tree.nodes_at(hi) / tree.nodes_at(lo);
      TerminalSpec cb;
      cb.kind = TerminalSpec::Kind::Callback;
      cb.dim = problem.d;
      cb.lipschitz = theta->est_lipschitz;
      cb.callback = [theta, base_node, stride](std::int64_t leaf, const VectorXd& xT) {
        return theta->eval(base_node * stride + leaf, xT(0));
      };
      sub.terminal = cb;
    }
    return sub;
  }

  ScenarioTree subtree(int i, std::int64_t node) const {
    const int lo = part.levels[static_cast<size_t>(i - 1)];
    const int hi = part.levels[static_cast<size_t>(i)];
    return build_subtree(part.boundaries[static_cast<size_t>(i)],
                         part.boundaries[static_cast<size_t>(i - 1)], hi - lo,
                         problem.m, tree.walk(lo).col(node));
  }
};

}  // namespace

std::vector<TerminalMap> backward_terminal_maps(const Problem& problem,
                                                const ScenarioTree& tree,
                                                const Partition& part,
                                                const GlobalConfig& cfg) {
  check_scope(problem);
  cfg.validate();
  problem.validate(tree);

  StitchContext ctx{problem, tree, cfg, part};
  const int P = part.count();
  std::vector<TerminalMap> thetas(static_cast<size_t>(P));

  std::optional<double> chain = problem.rho_C ? std::optional<double>(
                                                    problem.terminal.lipschitz)
                                              : std::nullopt;

  for (int i = P; i >= 1; --i) {
    const int lo_level = part.levels[static_cast<size_t>(i - 1)];
    TerminalMap& theta = thetas[static_cast<size_t>(i - 1)];
    theta.level = lo_level;
    theta.x_lo = cfg.x_lo;
    theta.x_hi = cfg.x_hi;
    theta.grid_n = cfg.x_grid_n;
    theta.tables.assign(static_cast<size_t>(tree.nodes_at(lo_level)),
                        MatrixXd::Zero(problem.d, cfg.x_grid_n));

    for (std::int64_t v = 0; v < tree.nodes_at(lo_level); ++v) {
      ScenarioTree sub = ctx.subtree(i, v);
      for (int g = 0; g < cfg.x_grid_n; ++g) {
        Problem sp = ctx.sub_problem(i, thetas, v, theta.grid_x(g),
                                     VectorXd::Zero(problem.d));
        try {
          auto [sol, report] = solve_local(sp, sub, cfg.picard);
          theta.tables[static_cast<size_t>(v)].col(g) =
              root_y(sub, sp.terminal, sol);
        } catch (const NonContractive& e) {
          throw SubintervalNonContractive(
              std::string("subinterval diverged: ") + e.what(), i);
        }
      }
    }
    theta.est_lipschitz = theta.measure_lipschitz();
    if (chain) {
      const double len = part.boundaries[static_cast<size_t>(i)] -
                         part.boundaries[static_cast<size_t>(i - 1)];
      chain = zhang_chain(*chain, *problem.rho_C, len);
      theta.zhang_bound = chain;
    }
  }
  return thetas;
}

std::pair<SolutionPair, GlobalReport> solve_global(const Problem& problem,
                                                   const ScenarioTree& tree,
                                                   const GlobalConfig& cfg) {
  check_scope(problem);
  cfg.validate();
  problem.validate(tree);

  const double cell = (cfg.x_hi - cfg.x_lo) / (cfg.x_grid_n - 1);
  if (problem.x0(0) < cfg.x_lo - cell || problem.x0(0) > cfg.x_hi + cell)
    throw GridOutOfRange("x0 lies outside the terminal-map grid");

  GlobalConfig attempt = cfg;
  GlobalReport report;
  while (true) {
    Partition part;
    std::vector<TerminalMap> thetas;
    try {
      part = build_partition(tree.grid(), attempt.max_len);
      thetas = backward_terminal_maps(problem, tree, part, attempt);
    } catch (const SubintervalNonContractive&) {
      if (attempt.max_len / 2.0 < std::max(attempt.min_len, tree.grid().dt)) {
        throw PartitionExhausted(
            "bisection reached min_len with a non-contractive subinterval");
      }
      attempt.max_len /= 2.0;
      ++report.bisections;
      continue;
    }

    // Forward pass over the frozen partition.
    StitchContext ctx{problem, tree, attempt, part};
    const int P = part.count();
    report.partition = part;
    report.intervals.assign(static_cast<size_t>(P), IntervalReport{});
    SolutionPair full;
    full.X = AdaptedProcess::zero(tree, problem.n);
    full.V = AdaptedProcess::zero(tree, problem.d);
    full.X.at(0).col(0) = problem.x0;
    full.V.at(0).col(0) = problem.v0;

    try {
      for (int i = 1; i <= P; ++i) {
        const int lo = part.levels[static_cast<size_t>(i - 1)];
        const int hi = part.levels[static_cast<size_t>(i)];
        IntervalReport& ir = report.intervals[static_cast<size_t>(i - 1)];
        ir.t_lo = part.boundaries[static_cast<size_t>(i - 1)];
        ir.t_hi = part.boundaries[static_cast<size_t>(i)];
        ir.theta_lipschitz = thetas[static_cast<size_t>(i - 1)].est_lipschitz;
        ir.zhang_bound = thetas[static_cast<size_t>(i - 1)].zhang_bound;
        PieceStats stats;

        for (std::int64_t v = 0; v < tree.nodes_at(lo); ++v) {
          const double x_start = full.X.at(lo)(0, v);
          if (x_start < attempt.x_lo - cell || x_start > attempt.x_hi + cell)
            throw GridOutOfRange("solution left the terminal-map grid at t = " +
                                 std::to_string(ir.t_lo));
          ScenarioTree sub = ctx.subtree(i, v);
          Problem sp =
              ctx.sub_problem(i, thetas, v, x_start, full.V.at(lo).col(v));
          auto [sol, preport] = solve_local(sp, sub, attempt.picard);
          absorb(stats, preport);

          // Interface identity at the left boundary of this piece. root_y is
          // invariant to the V offset, so it matches the table built with
          // V starting at zero.
          if (i > 1) {
            const VectorXd lhs =
                thetas[static_cast<size_t>(i - 1)].eval(v, x_start);
            const VectorXd rhs = root_y(sub, sp.terminal, sol);
            ir.interface_mismatch =
                std::max(ir.interface_mismatch, (lhs - rhs).norm());
          }

          // Copy the piece into the full tree.
          const int depth = hi - lo;
          for (int k = 1; k <= depth; ++k) {
            const std::int64_t stride = sub.nodes_at(k);
            for (std::int64_t j = 0; j < stride; ++j) {
              full.X.at(lo + k).col(v * stride + j) = sol.X.at(k).col(j);
              full.V.at(lo + k).col(v * stride + j) = sol.V.at(k).col(j);
            }
          }
        }
        ir.max_iterations = stats.iterations;
        ir.max_contraction = stats.contraction;
        report.max_interface_mismatch =
            std::max(report.max_interface_mismatch, ir.interface_mismatch);
      }
    } catch (const NonContractive&) {
      if (attempt.max_len / 2.0 < std::max(attempt.min_len, tree.grid().dt))
        throw PartitionExhausted(
            "bisection reached min_len with a non-contractive subinterval");
      attempt.max_len /= 2.0;
      ++report.bisections;
      continue;
    }
    return {std::move(full), std::move(report)};
  }
}

double zhang_y0_lipschitz(const Problem& problem, const ScenarioTree& tree,
                          const std::vector<std::pair<double, double>>& x_pairs,
                          const PicardConfig& cfg) {
  if (problem.n != 1) throw ScopeViolation("the Zhang estimate is stated for n = 1");
  auto y0_from = [&](double x) {
    Problem p = problem;
    p.x0 = VectorXd::Constant(1, x);
    auto [sol, report] = solve_local(p, tree, cfg);
    MartingaleProcess M = apply_M(tree, p.terminal, sol.X, sol.V);
    return (M.base.at(0).col(0) - sol.V.at(0).col(0)).eval();
  };
  double worst = 0.0;
  for (const auto& [a, b] : x_pairs) {
    if (a == b) continue;
    worst = std::max(worst, (y0_from(a) - y0_from(b)).norm() / std::abs(a - b));
  }
  return worst;
}

}  // namespace fds
