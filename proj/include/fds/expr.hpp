#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fds/errors.hpp"

namespace fds {

/// Flat view of the coefficient-function arguments (t, x, y, z, w). The grid
/// step is exposed to expressions as the name "dt".
struct EvalEnv {
  double t = 0.0;
  double dt = 0.0;
  const double* x = nullptr;
  int n = 0;
  const double* y = nullptr;
  int d = 0;
  const double* z = nullptr;
  int p = 0;
  const double* w = nullptr;
  int m = 0;
};

enum class VarSlot { Time, X, Y, Z, W, Named };

enum class ExprOp {
  Number, Var, Neg,
  Add, Sub, Mul, Div, Pow,
  Lt, Gt, Le, Ge, Eq, Ne,
  Exp, Log, Sqrt, Abs, Tanh,
  Min, Max, Select,
};

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  ExprOp op = ExprOp::Number;
  double number = 0.0;
  VarSlot slot = VarSlot::Named;
  int index = 0;  ///< zero-based slot index for X/Y/Z/W
  std::string name;
  std::vector<ExprPtr> args;
};

/// Immutable, shareable expression.
class Expr {
 public:
  Expr() = default;
  explicit Expr(ExprPtr root) : root_(std::move(root)) {}

  static Expr parse(const std::string& src);

  double eval(const EvalEnv& env) const;
  double eval(const std::map<std::string, double>& env) const;

  std::string print() const;
  bool structurally_equal(const Expr& other) const;

  /// Whether any walk coordinate w1..wm appears.
  bool uses_randomness() const;
  /// Largest one-based index referenced per slot, for signature checks.
  int max_index(VarSlot slot) const;

  const ExprPtr& root() const { return root_; }

 private:
  ExprPtr root_;
};

Expr parse(const std::string& src);
double evaluate(const Expr& e, const std::map<std::string, double>& env);

/// Central difference (e(v+h) - e(v-h)) / (2h).
double finite_diff(const Expr& e, const std::string& var,
                   const std::map<std::string, double>& env, double h);

/// One coefficient function (mu, sigma, f or phi): an expression per output
/// component, row-major.
struct CoefficientFn {
  std::vector<Expr> exprs;
  int rows = 0;
  int cols = 1;
  bool uses_randomness = false;

  static CoefficientFn from_strings(const std::vector<std::string>& srcs, int rows,
                                    int cols);

  Eigen::MatrixXd eval(const EvalEnv& env) const;
  /// Throws UnboundVariable if any referenced index exceeds the signature.
  void check_signature(int n, int d, int p, int m) const;
  bool zero() const;  ///< all components are the literal 0
};

}  // namespace fds
