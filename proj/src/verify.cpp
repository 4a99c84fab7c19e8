#include "fds/verify.hpp"

#include <cmath>
#include <random>

namespace fds {

FbsdeTriple to_fbsde_triple(const Problem& problem, const ScenarioTree& tree,
                            const SolutionPair& sol) {
  FbsdeTriple t;
  t.X = sol.X;
  t.M = apply_M(tree, problem.terminal, sol.X, sol.V);
  t.Y = t.M.base - sol.V;
  return t;
}

BackwardResiduals backward_residual(const Problem& problem, const ScenarioTree& tree,
                                    const FbsdeTriple& triple,
                                    const AdaptedProcess& V) {
  const int N = tree.grid().steps;
  const int b = tree.branching();
  BackwardResiduals res;
  for (int k = 0; k < N; ++k) {
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      for (int c = 0; c < b; ++c) {
        const std::int64_t ch = tree.child(i, c);
        const double r = (triple.Y.at(k + 1).col(ch) - triple.Y.at(k).col(i) +
                          V.at(k + 1).col(ch) - V.at(k).col(i) -
                          triple.M.base.at(k + 1).col(ch) +
                          triple.M.base.at(k).col(i))
                             .cwiseAbs()
                             .maxCoeff();
        res.dynamics = std::max(res.dynamics, r);
      }
    }
  }
  MatrixXd xi = problem.terminal.apply(tree, triple.X);
  res.terminal = (triple.Y.at(N) - xi).cwiseAbs().maxCoeff();
  return res;
}

double forward_residual(const Problem& problem, const ScenarioTree& tree,
                        const FbsdeTriple& triple) {
  const int N = tree.grid().steps;
  const int b = tree.branching();
  const double dt = tree.grid().dt;
  LProcess L1 = apply_L(problem.ops.L1, triple.M);
  LProcess L2 = apply_L(problem.ops.L2, triple.M);

  double worst = 0.0;
  VectorXd dw(problem.m);
  for (int k = 0; k < N; ++k) {
    EvalEnv env;
    env.t = tree.grid().time(k);
    env.dt = dt;
    env.n = problem.n;
    env.d = problem.d;
    env.m = problem.m;
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      env.x = triple.X.at(k).col(i).data();
      env.y = triple.Y.at(k).col(i).data();
      env.w = tree.walk(k).col(i).data();
      env.z = L1.values.at(k).col(i).data();
      env.p = problem.p1();
      MatrixXd drift = problem.mu.eval(env) * dt;
      env.z = L2.values.at(k).col(i).data();
      env.p = problem.p2();
      MatrixXd vol = problem.sigma.eval(env);
      for (int c = 0; c < b; ++c) {
        const std::int64_t ch = tree.child(i, c);
        for (int j = 0; j < problem.m; ++j) dw(j) = tree.walk_increment(c, j);
        const double r = (triple.X.at(k + 1).col(ch) - triple.X.at(k).col(i) -
                          drift.col(0) - vol * dw)
                             .cwiseAbs()
                             .maxCoeff();
        worst = std::max(worst, r);
      }
    }
  }
  return worst;
}

void AssumptionReport::add(ConditionResult c) {
  if (!c.informational) pass = pass && c.pass;
  conditions.push_back(std::move(c));
}

const ConditionResult* AssumptionReport::find(const std::string& name) const {
  for (const auto& c : conditions)
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

constexpr double kCheckTol = 1e-9;

/// Positive part of (lhs - bound), normalized by the bound's scale.
double violation(double lhs, double bound, double scale) {
  return std::max(0.0, lhs - bound) / std::max(scale, 1e-12);
}

struct Sampler {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 2.0};

  explicit Sampler(std::uint64_t seed) : rng(seed) {}
  VectorXd vec(int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
  }
};

EvalEnv env_of(double t, const VectorXd& x, const VectorXd& y, const VectorXd& z,
               const VectorXd& w) {
  EvalEnv env;
  env.t = t;
  env.x = x.data();
  env.n = static_cast<int>(x.size());
  env.y = y.data();
  env.d = static_cast<int>(y.size());
  env.z = z.data();
  env.p = static_cast<int>(z.size());
  env.w = w.data();
  env.m = static_cast<int>(w.size());
  return env;
}

}  // namespace

AssumptionReport check_A1(const Problem& problem, const ScenarioTree& tree,
                          int n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw ValidationError("check_A1 needs at least 2 samples");
  Sampler smp(seed);
  std::uniform_int_distribution<int> level_pick(0, tree.grid().steps);
  const double C = problem.lipschitz_C;

  ConditionResult mono{"mu_monotone_x"}, lip_x{"mu_lipschitz_x"},
      lip_yz{"mu_lipschitz_yz"}, growth{"mu_growth"}, sig{"sigma_lipschitz"},
      flip{"f_lipschitz"}, phi{"phi_lipschitz"};
  lip_x.informational = true;  // A1.2' is stronger than what A1 requires

  for (int s = 0; s < n_samples; ++s) {
    const int level = level_pick(smp.rng);
    const double t = tree.grid().time(level);
    std::uniform_int_distribution<std::int64_t> node_pick(0, tree.nodes_at(level) - 1);
    const VectorXd w = tree.walk(level).col(node_pick(smp.rng));

    const VectorXd x = smp.vec(problem.n), xp = smp.vec(problem.n);
    const VectorXd y = smp.vec(problem.d), yp = smp.vec(problem.d);
    const VectorXd z1 = smp.vec(problem.p1()), z1p = smp.vec(problem.p1());
    const VectorXd z2 = smp.vec(problem.p2()), z2p = smp.vec(problem.p2());
    const VectorXd z3 = smp.vec(problem.p3()), z3p = smp.vec(problem.p3());

    const VectorXd mu_x = problem.mu.eval(env_of(t, x, y, z1, w)).col(0);
    const VectorXd mu_xp = problem.mu.eval(env_of(t, xp, y, z1, w)).col(0);
    const VectorXd mu_ypzp = problem.mu.eval(env_of(t, x, yp, z1p, w)).col(0);

    const double dx2 = (x - xp).squaredNorm();
    if (dx2 > 0.0) {
      mono.max_violation = std::max(
          mono.max_violation,
          violation((x - xp).dot(mu_x - mu_xp), C * dx2, dx2));
      lip_x.max_violation = std::max(
          lip_x.max_violation,
          violation((mu_x - mu_xp).norm(), C * std::sqrt(dx2), std::sqrt(dx2)));
    }
    const double dyz = (y - yp).norm() + (z1 - z1p).norm();
    if (dyz > 0.0)
      lip_yz.max_violation = std::max(
          lip_yz.max_violation, violation((mu_x - mu_ypzp).norm(), C * dyz, dyz));

    const VectorXd zero_y = VectorXd::Zero(problem.d);
    const VectorXd zero_z1 = VectorXd::Zero(problem.p1());
    const VectorXd mu_0 = problem.mu.eval(env_of(t, x, zero_y, zero_z1, w)).col(0);
    growth.max_violation =
        std::max(growth.max_violation,
                 violation(mu_0.norm(), C * (1.0 + x.norm()), 1.0 + x.norm()));

    const MatrixXd sg = problem.sigma.eval(env_of(t, x, y, z2, w));
    const MatrixXd sgp = problem.sigma.eval(env_of(t, xp, yp, z2p, w));
    const double rhs2 = dx2 + (y - yp).squaredNorm() + (z2 - z2p).squaredNorm();
    if (rhs2 > 0.0)
      sig.max_violation = std::max(
          sig.max_violation, violation((sg - sgp).squaredNorm(), C * rhs2, rhs2));

    const VectorXd fv = problem.f.eval(env_of(t, x, y, z3, w)).col(0);
    const VectorXd fvp = problem.f.eval(env_of(t, xp, yp, z3p, w)).col(0);
    const double frhs = (x - xp).norm() + (y - yp).norm() + (z3 - z3p).norm();
    if (frhs > 0.0)
      flip.max_violation =
          std::max(flip.max_violation, violation((fv - fvp).norm(), C * frhs, frhs));

    if (problem.terminal.kind == TerminalSpec::Kind::Pointwise) {
      EvalEnv pe = env_of(tree.grid().T, x, zero_y, zero_z1, w);
      EvalEnv pep = env_of(tree.grid().T, xp, zero_y, zero_z1, w);
      VectorXd pv(problem.d), pvp(problem.d);
      for (int c = 0; c < problem.d; ++c) {
        pv(c) = problem.terminal.exprs[static_cast<size_t>(c)].eval(pe);
        pvp(c) = problem.terminal.exprs[static_cast<size_t>(c)].eval(pep);
      }
      const double dx = (x - xp).norm();
      if (dx > 0.0)
        phi.max_violation =
            std::max(phi.max_violation,
                     violation((pv - pvp).norm(), problem.terminal.lipschitz * dx, dx));
    }
  }

  AssumptionReport report;
  for (ConditionResult* c : {&mono, &lip_x, &lip_yz, &growth, &sig, &flip, &phi}) {
    c->samples = n_samples;
    c->pass = c->max_violation <= kCheckTol;
    report.add(*c);
  }
  return report;
}

AssumptionReport check_A2(const Problem& problem, const ScenarioTree& tree,
                          int n_y_samples, int n_state_samples, std::uint64_t seed) {
  if (problem.n != 1) throw ScopeViolation("the sign condition is stated for n = 1");
  if (problem.sigma.exprs.empty())
    throw ScopeViolation("sigma is required");
  for (const auto& e : problem.sigma.exprs)
    if (e.max_index(VarSlot::Z) > 0)
      throw ScopeViolation("sigma must not depend on z");
  if (!problem.gamma) throw ValidationError("gamma is required for this check");
  if (problem.p1() != problem.d * problem.m || problem.p3() != problem.d * problem.m)
    throw ScopeViolation("the sign condition assumes integrand-valued operators");

  const int d = problem.d;
  const int m = problem.m;
  const double gamma = *problem.gamma;
  Sampler smp(seed);
  std::uniform_int_distribution<int> level_pick(0, tree.grid().steps);

  // Unit-sphere directions; for d = 1 the sphere is just {-1, +1}.
  std::vector<VectorXd> dirs;
  if (d == 1) {
    dirs.push_back(VectorXd::Constant(1, 1.0));
    dirs.push_back(VectorXd::Constant(1, -1.0));
  } else {
    for (int s = 0; s < n_y_samples; ++s) {
      VectorXd v = smp.vec(d);
      if (v.norm() > 0.0) dirs.push_back(v.normalized());
    }
  }

  ConditionResult cond{"lambda_sign"};
  cond.samples = n_state_samples * static_cast<int>(dirs.size());

  auto diff = [](const Expr& e, const std::string& var,
                 const std::map<std::string, double>& env) {
    const double v = env.at(var);
    return finite_diff(e, var, env, 1e-4 * std::max(1.0, std::abs(v)));
  };

  for (int s = 0; s < n_state_samples; ++s) {
    const int level = level_pick(smp.rng);
    std::uniform_int_distribution<std::int64_t> node_pick(0, tree.nodes_at(level) - 1);
    const VectorXd w = tree.walk(level).col(node_pick(smp.rng));

    std::map<std::string, double> env;
    env["t"] = tree.grid().time(level);
    env["x1"] = smp.normal(smp.rng);
    for (int i = 0; i < d; ++i) env["y" + std::to_string(i + 1)] = smp.normal(smp.rng);
    for (int i = 0; i < d * m; ++i)
      env["z" + std::to_string(i + 1)] = smp.normal(smp.rng);
    for (int j = 0; j < m; ++j) env["w" + std::to_string(j + 1)] = w(j);

    const Expr& mu = problem.mu.exprs[0];
    MatrixXd dz_mu(d, m);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j < m; ++j)
        dz_mu(r, j) = diff(mu, "z" + std::to_string(r * m + j + 1), env);
    VectorXd dy_mu(d);
    for (int i = 0; i < d; ++i) dy_mu(i) = diff(mu, "y" + std::to_string(i + 1), env);

    // dy_sigma(k, j) = d sigma_j / d y_k, dx_sigma(j) = d sigma_j / d x.
    MatrixXd dy_sigma(d, m);
    VectorXd dx_sigma(m);
    for (int j = 0; j < m; ++j) {
      const Expr& sg = problem.sigma.exprs[static_cast<size_t>(j)];
      dx_sigma(j) = diff(sg, "x1", env);
      for (int k = 0; k < d; ++k)
        dy_sigma(k, j) = diff(sg, "y" + std::to_string(k + 1), env);
    }

    std::vector<MatrixXd> dz_f(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
      dz_f[static_cast<size_t>(i)].resize(d, m);
      const Expr& fi = problem.f.exprs[static_cast<size_t>(i)];
      for (int r = 0; r < d; ++r)
        for (int j = 0; j < m; ++j)
          dz_f[static_cast<size_t>(i)](r, j) =
              diff(fi, "z" + std::to_string(r * m + j + 1), env);
    }

    const Eigen::RowVectorXd mix = dx_sigma.transpose() * dz_mu.transpose();  // 1 x d
    for (const VectorXd& y : dirs) {
      double lambda1 = 0.0;
      for (int i = 0; i < d; ++i) {
        const MatrixXd& Fi = dz_f[static_cast<size_t>(i)];
        lambda1 += y(i) * ((Fi * dz_mu.transpose()).trace() -
                           y.dot(dz_mu * Fi.transpose() * y) +
                           y.dot(dy_sigma * Fi.transpose() * y));
        // Quadratic-form reading of the first-order terms, so the condition
        // is symmetric in y on the unit sphere.
        lambda1 += y(i) * y(i) * (mix(i) + dy_mu(i));
      }
      const double lambda2 = dz_mu.squaredNorm() -
                             (dz_mu.transpose() * y).squaredNorm() +
                             2.0 * y.dot(dz_mu * dy_sigma.transpose() * y);
      cond.max_violation =
          std::max(cond.max_violation, lambda1 + gamma * std::abs(lambda2));
    }
  }

  cond.pass = cond.max_violation <= 1e-6;  // finite-difference slack
  AssumptionReport report;
  report.add(cond);
  return report;
}

AssumptionReport check_ym_lipschitz(const ScenarioTree& tree,
                                    const TerminalSpec& terminal, int x_dim,
                                    int n_pairs, std::uint64_t seed) {
  Sampler smp(seed);
  const double C = terminal.lipschitz;
  const int d = terminal.dim;

  ConditionResult m_cond{"m_lipschitz_2C_2"}, y_cond{"y_lipschitz_2C_3"};
  auto random_process = [&](int dim) {
    AdaptedProcess p = AdaptedProcess::zero(tree, dim);
    for (int k = 0; k < tree.levels(); ++k)
      for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
        for (int r = 0; r < dim; ++r) p.at(k)(r, i) = smp.normal(smp.rng);
    return p;
  };

  for (int s = 0; s < n_pairs; ++s) {
    AdaptedProcess X = random_process(x_dim), Xp = random_process(x_dim);
    AdaptedProcess V = random_process(d), Vp = random_process(d);
    // Exercise the X-only and V-only cases too.
    if (s % 3 == 1) Xp = X;
    if (s % 3 == 2) Vp = V;

    const double dX = s2_norm(X - Xp);
    const double dV = s2_norm(V - Vp);
    AdaptedProcess Mdiff =
        apply_M(tree, terminal, X, V).base - apply_M(tree, terminal, Xp, Vp).base;
    AdaptedProcess Ydiff =
        apply_Y(tree, terminal, X, V) - apply_Y(tree, terminal, Xp, Vp);
    const double scale = std::max(1.0, 2.0 * C * dX + 3.0 * dV);
    m_cond.max_violation =
        std::max(m_cond.max_violation,
                 violation(s2_norm(Mdiff), 2.0 * C * dX + 2.0 * dV, scale));
    y_cond.max_violation =
        std::max(y_cond.max_violation,
                 violation(s2_norm(Ydiff), 2.0 * C * dX + 3.0 * dV, scale));
  }

  AssumptionReport report;
  for (ConditionResult* c : {&m_cond, &y_cond}) {
    c->samples = n_pairs;
    c->pass = c->max_violation <= kCheckTol;
    report.add(*c);
  }
  return report;
}

}  // namespace fds
