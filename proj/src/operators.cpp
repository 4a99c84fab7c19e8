#include "fds/operators.hpp"

#include <cmath>
#include <random>

namespace fds {

TerminalSpec TerminalSpec::pointwise(const std::vector<std::string>& srcs,
                                     double lipschitz) {
  TerminalSpec s;
  s.kind = Kind::Pointwise;
  s.dim = static_cast<int>(srcs.size());
  for (const auto& src : srcs) s.exprs.push_back(Expr::parse(src));
  s.lipschitz = lipschitz;
  return s;
}

TerminalSpec TerminalSpec::path_sup(const std::vector<std::string>& srcs,
                                    double lipschitz) {
  TerminalSpec s = pointwise(srcs, lipschitz);
  s.kind = Kind::PathSup;
  return s;
}

TerminalSpec TerminalSpec::path_integral(const std::vector<std::string>& srcs,
                                         double lipschitz) {
  TerminalSpec s = pointwise(srcs, lipschitz);
  s.kind = Kind::PathIntegral;
  return s;
}

MatrixXd TerminalSpec::apply(const ScenarioTree& tree, const AdaptedProcess& X) const {
  const int N = tree.grid().steps;
  const std::int64_t leaves = tree.leaves();
  MatrixXd out = MatrixXd::Zero(dim, leaves);

  if (kind == Kind::Callback) {
    for (std::int64_t l = 0; l < leaves; ++l) {
      VectorXd xT = X.at(N).col(l);
      VectorXd v = callback(l, xT);
      if (v.size() != dim) throw DimensionMismatch("terminal callback dimension");
      out.col(l) = v;
    }
    return out;
  }

  EvalEnv env;
  env.dt = tree.grid().dt;
  env.n = X.dim;
  env.m = tree.brownian_dim();

  if (kind == Kind::Pointwise) {
    env.t = tree.grid().T;
    for (std::int64_t l = 0; l < leaves; ++l) {
      env.x = X.at(N).col(l).data();
      env.w = tree.walk(N).col(l).data();
      for (int c = 0; c < dim; ++c) out(c, l) = exprs[static_cast<size_t>(c)].eval(env);
    }
    return out;
  }

  // Path functionals: walk each scenario through its ancestors.
  const double dt = tree.grid().dt;
  const bool integral = kind == Kind::PathIntegral;
  const int last = integral ? N - 1 : N;
  for (std::int64_t l = 0; l < leaves; ++l) {
    VectorXd acc = VectorXd::Zero(dim);
    for (int k = 0; k <= last; ++k) {
      const std::int64_t node = tree.ancestor(l, N - k);
      env.t = tree.grid().time(k);
      env.x = X.at(k).col(node).data();
      env.w = tree.walk(k).col(node).data();
      for (int c = 0; c < dim; ++c) {
        const double v = exprs[static_cast<size_t>(c)].eval(env);
        if (integral)
          acc(c) += v * dt;
        else
          acc(c) = std::max(acc(c), std::abs(v));
      }
    }
    out.col(l) = acc;
  }
  return out;
}

int OperatorKind::output_dim(int d, int m) const {
  switch (variant) {
    case OperatorVariant::Ito:
      return d * m;
    case OperatorVariant::Identity:
      return d;
    case OperatorVariant::CondQV:
    case OperatorVariant::RunningQV:
    case OperatorVariant::ResidualQV:
      return 1;
    case OperatorVariant::Delayed: {
      OperatorKind b = *this;
      b.variant = base;
      return b.output_dim(d, m);
    }
  }
  return d;
}

bool OperatorKind::h2_valued() const {
  switch (variant) {
    case OperatorVariant::Ito:
    case OperatorVariant::CondQV:
      return true;
    case OperatorVariant::Identity:
    case OperatorVariant::RunningQV:
    case OperatorVariant::ResidualQV:
      return false;
    case OperatorVariant::Delayed: {
      OperatorKind b = *this;
      b.variant = base;
      return b.h2_valued();
    }
  }
  return false;
}

void OperatorTuple::validate() const {
  if (L2.h2_valued())
    throw ValidationError(
        "L2 must be S^2-valued (identity, running_qv, residual_qv or a delayed "
        "combination of those)");
  for (const auto* k : {&L1, &L2, &L3}) {
    for (const auto& [off, wt] : k->alpha_z) {
      if (off > 0) throw ValidationError("alpha_z offsets must be <= 0");
      if (wt < 0.0) throw ValidationError("alpha_z weights must be nonnegative");
    }
  }
}

MartingaleProcess apply_M(const ScenarioTree& tree, const TerminalSpec& terminal,
                          const AdaptedProcess& X, const AdaptedProcess& V) {
  MatrixXd xi = terminal.apply(tree, X) + V.at(tree.grid().steps);
  return martingale_from_terminal(tree, xi);
}

AdaptedProcess apply_Y(const ScenarioTree& tree, const TerminalSpec& terminal,
                       const AdaptedProcess& X, const AdaptedProcess& V) {
  return apply_M(tree, terminal, X, V).base - V;
}

namespace {

LProcess residual_qv(const OperatorKind& kind, const MartingaleProcess& M) {
  if (!kind.Mref) throw MissingReference("residual_qv needs a reference martingale");
  if (M.base.dim != 1 || kind.Mref->base.dim != 1)
    throw UnsupportedDimension("residual_qv is defined for d = 1");
  const ScenarioTree& tree = M.tree();
  const int N = tree.grid().steps;
  const int b = tree.branching();
  AdaptedProcess qvR = AdaptedProcess::zero(tree, 1);
  for (int k = 0; k < N; ++k) {
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      double num = 0.0, den = 0.0;
      Eigen::VectorXd dM(b), dRef(b);
      for (int c = 0; c < b; ++c) {
        const std::int64_t ch = tree.child(i, c);
        dM(c) = M.base.at(k + 1)(0, ch) - M.base.at(k)(0, i);
        dRef(c) = kind.Mref->base.at(k + 1)(0, ch) - kind.Mref->base.at(k)(0, i);
        num += dM(c) * dRef(c);
        den += dRef(c) * dRef(c);
      }
      const double z = den > 0.0 ? num / den : 0.0;
      double dqv = 0.0;
      for (int c = 0; c < b; ++c) {
        const double dR = dM(c) - z * dRef(c);
        dqv += dR * dR;
      }
      dqv /= b;
      for (int c = 0; c < b; ++c)
        qvR.at(k + 1)(0, tree.child(i, c)) = qvR.at(k)(0, i) + dqv;
    }
  }
  LProcess out;
  out.h2 = false;
  out.values = AdaptedProcess::zero(tree, 1);
  for (int k = 0; k <= N; ++k)
    out.values.at(k) = qvR.at(k).array().max(0.0).sqrt().matrix();
  return out;
}

}  // namespace

LProcess apply_L(const OperatorKind& kind, const MartingaleProcess& M) {
  const ScenarioTree& tree = M.tree();
  const int N = tree.grid().steps;
  const int d = M.base.dim;
  const int m = tree.brownian_dim();

  switch (kind.variant) {
    case OperatorVariant::Ito: {
      LProcess out;
      out.h2 = true;
      out.values = AdaptedProcess::zero(tree, d * m);
      for (int k = 0; k < N; ++k) out.values.at(k) = M.Z[static_cast<size_t>(k)];
      return out;
    }
    case OperatorVariant::Identity: {
      LProcess out;
      out.h2 = false;
      out.values = M.base;
      return out;
    }
    case OperatorVariant::CondQV: {
      if (d != 1) throw UnsupportedDimension("cond_qv is defined for d = 1");
      LProcess out;
      out.h2 = true;
      out.values = AdaptedProcess::zero(tree, 1);
      auto expect = conditional_expectation_all(tree, M.qv.at(N));
      for (int k = 0; k <= N; ++k)
        out.values.at(k) = (expect[static_cast<size_t>(k)] - M.qv.at(k))
                               .array()
                               .max(0.0)
                               .sqrt()
                               .matrix();
      return out;
    }
    case OperatorVariant::RunningQV: {
      if (d != 1) throw UnsupportedDimension("running_qv is defined for d = 1");
      LProcess out;
      out.h2 = false;
      out.values = AdaptedProcess::zero(tree, 1);
      for (int k = 0; k <= N; ++k)
        out.values.at(k) = M.qv.at(k).array().max(0.0).sqrt().matrix();
      return out;
    }
    case OperatorVariant::ResidualQV:
      return residual_qv(kind, M);
    case OperatorVariant::Delayed: {
      OperatorKind base = kind;
      base.variant = kind.base;
      if (base.variant == OperatorVariant::Delayed)
        throw ValidationError("delayed operator cannot nest");
      LProcess inner = apply_L(base, M);
      LProcess out;
      out.h2 = inner.h2;
      out.values = AdaptedProcess::zero(tree, inner.values.dim);
      const int b = tree.branching();
      for (int k = 0; k <= N; ++k) {
        for (const auto& [off, wt] : kind.alpha_z) {
          const int src = k + off;
          if (src < 0) continue;  // zero padding before the initial time
          // The delayed value at level k is measurable at level src <= k;
          // spread it to the level-k descendants.
          const std::int64_t ratio =
              tree.nodes_at(k) / tree.nodes_at(src);
          for (std::int64_t i = 0; i < tree.nodes_at(k); ++i)
            out.values.at(k).col(i) += wt * inner.values.at(src).col(i / ratio);
        }
      }
      (void)b;
      return out;
    }
  }
  throw Error("internal: unknown operator variant");
}

double operator_norm(const LProcess& L) {
  return L.h2 ? h2_norm(L.values) : s2_norm(L.values);
}

L1Report check_L1(const OperatorKind& kind, const ScenarioTree& tree, int d,
                  int n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw ValidationError("check_L1 needs at least 2 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<MartingaleProcess> ms;
  ms.reserve(static_cast<size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    MatrixXd xi(d, tree.leaves());
    for (std::int64_t c = 0; c < xi.cols(); ++c)
      for (int r = 0; r < d; ++r) xi(r, c) = normal(rng);
    // Center so the martingale starts at zero.
    xi.colwise() -= xi.rowwise().mean().eval();
    ms.push_back(martingale_from_terminal(tree, xi));
  }

  L1Report report;
  report.samples = n_samples;
  report.declared_K = kind.K;
  for (int s = 0; s < n_samples; ++s) {
    const double denom = s2_norm(ms[static_cast<size_t>(s)].base);
    if (denom > 0.0) {
      const double ratio =
          operator_norm(apply_L(kind, ms[static_cast<size_t>(s)])) / denom;
      report.max_boundedness_ratio = std::max(report.max_boundedness_ratio, ratio);
    }
    if (s + 1 < n_samples) {
      const MartingaleProcess& a = ms[static_cast<size_t>(s)];
      const MartingaleProcess& b = ms[static_cast<size_t>(s) + 1];
      AdaptedProcess diffM = a.base - b.base;
      const double dn = s2_norm(diffM);
      if (dn > 0.0) {
        AdaptedProcess diffL = apply_L(kind, a).values - apply_L(kind, b).values;
        LProcess wrapped{diffL, kind.h2_valued()};
        const double ratio = operator_norm(wrapped) / dn;
        report.max_lipschitz_ratio = std::max(report.max_lipschitz_ratio, ratio);
      }
    }
  }
  const double tol = 1e-9 * std::max(1.0, kind.K);
  report.pass = report.max_boundedness_ratio <= kind.K + tol &&
                report.max_lipschitz_ratio <= kind.K + tol;
  return report;
}

}  // namespace fds
