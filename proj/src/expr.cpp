#include "fds/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace fds {

namespace {

struct Token {
  enum Kind { Number, Ident, Op, LParen, RParen, Comma, End } kind;
  std::string text;
  double value = 0.0;
  int column = 0;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return cur_; }
  Token take() {
    Token t = cur_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
    cur_.column = static_cast<int>(pos_) + 1;
    if (pos_ >= src_.size()) {
      cur_ = {Token::End, "", 0.0, cur_.column};
      return;
    }
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = src_.c_str() + pos_;
      char* end = nullptr;
      double v = std::strtod(begin, &end);
      if (end == begin) throw ParseError("malformed number", cur_.column);
      cur_ = {Token::Number, std::string(begin, static_cast<size_t>(end - begin)), v,
              cur_.column};
      pos_ += static_cast<size_t>(end - begin);
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      cur_ = {Token::Ident, src_.substr(start, pos_ - start), 0.0,
              static_cast<int>(start) + 1};
      return;
    }
    if (c == '(') {
      cur_ = {Token::LParen, "(", 0.0, cur_.column};
      ++pos_;
      return;
    }
    if (c == ')') {
      cur_ = {Token::RParen, ")", 0.0, cur_.column};
      ++pos_;
      return;
    }
    if (c == ',') {
      cur_ = {Token::Comma, ",", 0.0, cur_.column};
      ++pos_;
      return;
    }
    static const char* two[] = {"<=", ">=", "==", "!="};
    for (const char* op : two) {
      if (src_.compare(pos_, 2, op) == 0) {
        cur_ = {Token::Op, op, 0.0, cur_.column};
        pos_ += 2;
        return;
      }
    }
    if (std::string("+-*/^<>").find(c) != std::string::npos) {
      cur_ = {Token::Op, std::string(1, c), 0.0, cur_.column};
      ++pos_;
      return;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", cur_.column);
  }

  const std::string& src_;
  size_t pos_ = 0;
  Token cur_;
};

ExprPtr make_number(double v) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::Number;
  n->number = v;
  return n;
}

ExprPtr make_var(const std::string& name, int column) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::Var;
  n->name = name;
  n->slot = VarSlot::Named;
  if (name == "t") {
    n->slot = VarSlot::Time;
    return n;
  }
  auto classify = [&](char prefix, VarSlot slot) -> bool {
    if (name[0] != prefix) return false;
    if (name.size() == 1) {
      n->slot = slot;
      n->index = 0;
      return true;
    }
    for (size_t i = 1; i < name.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(name[i]))) return false;
    int idx = std::atoi(name.c_str() + 1);
    if (idx < 1) throw ParseError("variable indices are one-based", column);
    n->slot = slot;
    n->index = idx - 1;
    return true;
  };
  if (classify('x', VarSlot::X) || classify('y', VarSlot::Y) ||
      classify('z', VarSlot::Z) || classify('w', VarSlot::W))
    return n;
  return n;  // unknown name, reported at evaluation
}

struct FnSpec {
  ExprOp op;
  int arity;
};

bool function_spec(const std::string& name, FnSpec* out) {
  static const std::map<std::string, FnSpec> table = {
      {"exp", {ExprOp::Exp, 1}},   {"log", {ExprOp::Log, 1}},
      {"sqrt", {ExprOp::Sqrt, 1}}, {"abs", {ExprOp::Abs, 1}},
      {"tanh", {ExprOp::Tanh, 1}}, {"min", {ExprOp::Min, 2}},
      {"max", {ExprOp::Max, 2}},   {"select", {ExprOp::Select, 3}},
  };
  auto it = table.find(name);
  if (it == table.end()) return false;
  *out = it->second;
  return true;
}

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) {}

  ExprPtr parse_full() {
    ExprPtr e = comparison();
    if (lex_.peek().kind != Token::End)
      throw ParseError("unexpected trailing input '" + lex_.peek().text + "'",
                       lex_.peek().column);
    return e;
  }

 private:
  ExprPtr comparison() {
    ExprPtr lhs = additive();
    const Token& t = lex_.peek();
    if (t.kind == Token::Op &&
        (t.text == "<" || t.text == ">" || t.text == "<=" || t.text == ">=" ||
         t.text == "==" || t.text == "!=")) {
      std::string op = lex_.take().text;
      ExprPtr rhs = additive();
      auto n = std::make_shared<ExprNode>();
      n->op = op == "<"    ? ExprOp::Lt
              : op == ">"  ? ExprOp::Gt
              : op == "<=" ? ExprOp::Le
              : op == ">=" ? ExprOp::Ge
              : op == "==" ? ExprOp::Eq
                           : ExprOp::Ne;
      n->args = {lhs, rhs};
      return n;
    }
    return lhs;
  }

  ExprPtr additive() {
    ExprPtr lhs = term();
    while (lex_.peek().kind == Token::Op &&
           (lex_.peek().text == "+" || lex_.peek().text == "-")) {
      std::string op = lex_.take().text;
      ExprPtr rhs = term();
      auto n = std::make_shared<ExprNode>();
      n->op = op == "+" ? ExprOp::Add : ExprOp::Sub;
      n->args = {lhs, rhs};
      lhs = n;
    }
    return lhs;
  }

  ExprPtr term() {
    ExprPtr lhs = unary();
    while (lex_.peek().kind == Token::Op &&
           (lex_.peek().text == "*" || lex_.peek().text == "/")) {
      std::string op = lex_.take().text;
      ExprPtr rhs = unary();
      auto n = std::make_shared<ExprNode>();
      n->op = op == "*" ? ExprOp::Mul : ExprOp::Div;
      n->args = {lhs, rhs};
      lhs = n;
    }
    return lhs;
  }

  ExprPtr unary() {
    if (lex_.peek().kind == Token::Op && lex_.peek().text == "-") {
      lex_.take();
      ExprPtr operand = unary();
      if (operand->op == ExprOp::Number) {  // fold to a negative literal
        auto lit = std::make_shared<ExprNode>();
        lit->op = ExprOp::Number;
        lit->number = -operand->number;
        return lit;
      }
      auto n = std::make_shared<ExprNode>();
      n->op = ExprOp::Neg;
      n->args = {operand};
      return n;
    }
    return power();
  }

  ExprPtr power() {
    ExprPtr base = primary();
    if (lex_.peek().kind == Token::Op && lex_.peek().text == "^") {
      lex_.take();
      auto n = std::make_shared<ExprNode>();
      n->op = ExprOp::Pow;
      n->args = {base, unary()};  // right associative
      return n;
    }
    return base;
  }

  ExprPtr primary() {
    Token t = lex_.take();
    switch (t.kind) {
      case Token::Number:
        return make_number(t.value);
      case Token::Ident: {
        FnSpec spec;
        if (lex_.peek().kind == Token::LParen) {
          if (!function_spec(t.text, &spec))
            throw ParseError("unknown function '" + t.text + "'", t.column);
          lex_.take();
          auto n = std::make_shared<ExprNode>();
          n->op = spec.op;
          for (int i = 0; i < spec.arity; ++i) {
            if (i > 0) {
              Token comma = lex_.take();
              if (comma.kind != Token::Comma)
                throw ParseError("expected ','", comma.column);
            }
            n->args.push_back(comparison());
          }
          Token close = lex_.take();
          if (close.kind != Token::RParen)
            throw ParseError("expected ')'", close.column);
          return n;
        }
        return make_var(t.text, t.column);
      }
      case Token::LParen: {
        ExprPtr e = comparison();
        Token close = lex_.take();
        if (close.kind != Token::RParen)
          throw ParseError("expected ')'", close.column);
        return e;
      }
      default:
        throw ParseError("expected a value, got '" +
                             (t.text.empty() ? std::string("end of input") : t.text) + "'",
                         t.column);
    }
  }

  Lexer lex_;
};

double slot_value(const ExprNode& n, const EvalEnv& env) {
  auto fetch = [&](const double* base, int count, const char* what) {
    if (n.index >= count || base == nullptr)
      throw UnboundVariable(std::string("variable ") + what +
                            std::to_string(n.index + 1) + " is not in scope");
    return base[n.index];
  };
  switch (n.slot) {
    case VarSlot::Time:
      return env.t;
    case VarSlot::X:
      return fetch(env.x, env.n, "x");
    case VarSlot::Y:
      return fetch(env.y, env.d, "y");
    case VarSlot::Z:
      return fetch(env.z, env.p, "z");
    case VarSlot::W:
      return fetch(env.w, env.m, "w");
    case VarSlot::Named:
      if (n.name == "dt") return env.dt;
      throw UnboundVariable("unknown variable '" + n.name + "'");
  }
  return 0.0;
}

double apply_fn(const ExprNode& n, double a, double b, double c) {
  switch (n.op) {
    case ExprOp::Neg:
      return -a;
    case ExprOp::Add:
      return a + b;
    case ExprOp::Sub:
      return a - b;
    case ExprOp::Mul:
      return a * b;
    case ExprOp::Div:
      if (b == 0.0) throw DomainError("division by zero");
      return a / b;
    case ExprOp::Pow: {
      double r = std::pow(a, b);
      if (!std::isfinite(r)) throw DomainError("non-finite power result");
      return r;
    }
    case ExprOp::Lt:
      return a < b ? 1.0 : 0.0;
    case ExprOp::Gt:
      return a > b ? 1.0 : 0.0;
    case ExprOp::Le:
      return a <= b ? 1.0 : 0.0;
    case ExprOp::Ge:
      return a >= b ? 1.0 : 0.0;
    case ExprOp::Eq:
      return a == b ? 1.0 : 0.0;
    case ExprOp::Ne:
      return a != b ? 1.0 : 0.0;
    case ExprOp::Exp:
      return std::exp(a);
    case ExprOp::Log:
      if (a <= 0.0) throw DomainError("log of a non-positive value");
      return std::log(a);
    case ExprOp::Sqrt:
      if (a < 0.0) throw DomainError("sqrt of a negative value");
      return std::sqrt(a);
    case ExprOp::Abs:
      return std::abs(a);
    case ExprOp::Tanh:
      return std::tanh(a);
    case ExprOp::Min:
      return std::min(a, b);
    case ExprOp::Max:
      return std::max(a, b);
    case ExprOp::Select:
      return a != 0.0 ? b : c;
    default:
      throw Error("internal: apply_fn on a leaf");
  }
}

template <typename Leaf>
double eval_node(const ExprNode& n, const Leaf& leaf) {
  switch (n.op) {
    case ExprOp::Number:
      return n.number;
    case ExprOp::Var:
      return leaf(n);
    default: {
      double a = eval_node(*n.args[0], leaf);
      double b = n.args.size() > 1 ? eval_node(*n.args[1], leaf) : 0.0;
      double c = n.args.size() > 2 ? eval_node(*n.args[2], leaf) : 0.0;
      return apply_fn(n, a, b, c);
    }
  }
}

int precedence(ExprOp op) {
  switch (op) {
    case ExprOp::Lt:
    case ExprOp::Gt:
    case ExprOp::Le:
    case ExprOp::Ge:
    case ExprOp::Eq:
    case ExprOp::Ne:
      return 1;
    case ExprOp::Add:
    case ExprOp::Sub:
      return 2;
    case ExprOp::Mul:
    case ExprOp::Div:
      return 3;
    case ExprOp::Neg:
      return 4;
    case ExprOp::Pow:
      return 5;
    default:
      return 6;
  }
}

const char* op_text(ExprOp op) {
  switch (op) {
    case ExprOp::Add: return "+";
    case ExprOp::Sub: return "-";
    case ExprOp::Mul: return "*";
    case ExprOp::Div: return "/";
    case ExprOp::Pow: return "^";
    case ExprOp::Lt: return "<";
    case ExprOp::Gt: return ">";
    case ExprOp::Le: return "<=";
    case ExprOp::Ge: return ">=";
    case ExprOp::Eq: return "==";
    case ExprOp::Ne: return "!=";
    case ExprOp::Exp: return "exp";
    case ExprOp::Log: return "log";
    case ExprOp::Sqrt: return "sqrt";
    case ExprOp::Abs: return "abs";
    case ExprOp::Tanh: return "tanh";
    case ExprOp::Min: return "min";
    case ExprOp::Max: return "max";
    case ExprOp::Select: return "select";
    default: return "?";
  }
}

void print_node(const ExprNode& n, std::ostringstream& out, int parent_prec) {
  switch (n.op) {
    case ExprOp::Number: {
      std::ostringstream num;
      num.precision(17);
      num << n.number;
      // A negative literal binds like unary minus when reparsed.
      const bool wrap = std::signbit(n.number) && precedence(ExprOp::Neg) < parent_prec;
      if (wrap) out << "(";
      out << num.str();
      if (wrap) out << ")";
      return;
    }
    case ExprOp::Var:
      if (n.slot == VarSlot::Time) {
        out << "t";
      } else if (n.slot == VarSlot::Named) {
        out << n.name;
      } else {
        const char prefix = n.slot == VarSlot::X   ? 'x'
                            : n.slot == VarSlot::Y ? 'y'
                            : n.slot == VarSlot::Z ? 'z'
                                                   : 'w';
        out << prefix << (n.index + 1);
      }
      return;
    case ExprOp::Neg: {
      const bool wrap = precedence(n.op) < parent_prec;
      if (wrap) out << "(";
      out << "-";
      print_node(*n.args[0], out, precedence(n.op));
      if (wrap) out << ")";
      return;
    }
    case ExprOp::Exp:
    case ExprOp::Log:
    case ExprOp::Sqrt:
    case ExprOp::Abs:
    case ExprOp::Tanh:
    case ExprOp::Min:
    case ExprOp::Max:
    case ExprOp::Select: {
      out << op_text(n.op) << "(";
      for (size_t i = 0; i < n.args.size(); ++i) {
        if (i) out << ", ";
        print_node(*n.args[i], out, 0);
      }
      out << ")";
      return;
    }
    default: {
      const int prec = precedence(n.op);
      // Conservative: parenthesize when at or below the parent level, so
      // non-associative chains reparse identically.
      const bool wrap = prec <= parent_prec;
      const bool right_assoc = n.op == ExprOp::Pow;
      const bool non_assoc = prec == 1;  // comparisons never chain
      if (wrap) out << "(";
      print_node(*n.args[0], out, non_assoc || right_assoc ? prec : prec - 1);
      out << " " << op_text(n.op) << " ";
      print_node(*n.args[1], out, non_assoc || !right_assoc ? prec : prec - 1);
      if (wrap) out << ")";
      return;
    }
  }
}

}  // namespace

Expr Expr::parse(const std::string& src) {
  Parser p(src);
  return Expr(p.parse_full());
}

Expr parse(const std::string& src) { return Expr::parse(src); }

double Expr::eval(const EvalEnv& env) const {
  if (!root_) throw Error("empty expression");
  return eval_node(*root_, [&](const ExprNode& n) { return slot_value(n, env); });
}

double Expr::eval(const std::map<std::string, double>& env) const {
  if (!root_) throw Error("empty expression");
  return eval_node(*root_, [&](const ExprNode& n) {
    std::string key;
    if (n.slot == VarSlot::Time) {
      key = "t";
    } else if (n.slot == VarSlot::Named) {
      key = n.name;
    } else {
      const char prefix = n.slot == VarSlot::X   ? 'x'
                          : n.slot == VarSlot::Y ? 'y'
                          : n.slot == VarSlot::Z ? 'z'
                                                 : 'w';
      key = std::string(1, prefix) + std::to_string(n.index + 1);
      // bare names bind too: "x" means x1
      if (n.index == 0 && env.count(std::string(1, prefix)))
        key = std::string(1, prefix);
    }
    auto it = env.find(key);
    if (it == env.end())
      throw UnboundVariable("unbound variable '" + key + "'");
    return it->second;
  });
}

double evaluate(const Expr& e, const std::map<std::string, double>& env) {
  return e.eval(env);
}

std::string Expr::print() const {
  if (!root_) return "";
  std::ostringstream out;
  print_node(*root_, out, 0);
  return out.str();
}

namespace {

bool nodes_equal(const ExprNode& a, const ExprNode& b) {
  if (a.op != b.op) return false;
  if (a.op == ExprOp::Number) return a.number == b.number;
  if (a.op == ExprOp::Var)
    return a.slot == b.slot &&
           (a.slot == VarSlot::Named ? a.name == b.name : a.index == b.index);
  if (a.args.size() != b.args.size()) return false;
  for (size_t i = 0; i < a.args.size(); ++i)
    if (!nodes_equal(*a.args[i], *b.args[i])) return false;
  return true;
}

template <typename Fn>
void visit(const ExprNode& n, Fn&& fn) {
  fn(n);
  for (const auto& a : n.args) visit(*a, fn);
}

}  // namespace

bool Expr::structurally_equal(const Expr& other) const {
  if (!root_ || !other.root_) return root_ == other.root_;
  return nodes_equal(*root_, *other.root_);
}

bool Expr::uses_randomness() const {
  if (!root_) return false;
  bool found = false;
  visit(*root_, [&](const ExprNode& n) {
    if (n.op == ExprOp::Var && n.slot == VarSlot::W) found = true;
  });
  return found;
}

int Expr::max_index(VarSlot slot) const {
  if (!root_) return 0;
  int mx = 0;
  visit(*root_, [&](const ExprNode& n) {
    if (n.op == ExprOp::Var && n.slot == slot) mx = std::max(mx, n.index + 1);
  });
  return mx;
}

double finite_diff(const Expr& e, const std::string& var,
                   const std::map<std::string, double>& env, double h) {
  std::map<std::string, double> up = env;
  std::map<std::string, double> down = env;
  auto it = up.find(var);
  if (it == up.end()) throw UnboundVariable("finite_diff: '" + var + "' not bound");
  it->second += h;
  down[var] -= h;
  return (e.eval(up) - e.eval(down)) / (2.0 * h);
}

CoefficientFn CoefficientFn::from_strings(const std::vector<std::string>& srcs,
                                          int rows, int cols) {
  if (static_cast<int>(srcs.size()) != rows * cols)
    throw DimensionMismatch("coefficient needs " + std::to_string(rows * cols) +
                            " expressions, got " + std::to_string(srcs.size()));
  CoefficientFn fn;
  fn.rows = rows;
  fn.cols = cols;
  for (const auto& s : srcs) {
    fn.exprs.push_back(Expr::parse(s));
    fn.uses_randomness = fn.uses_randomness || fn.exprs.back().uses_randomness();
  }
  return fn;
}

Eigen::MatrixXd CoefficientFn::eval(const EvalEnv& env) const {
  Eigen::MatrixXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out(r, c) = exprs[static_cast<size_t>(r * cols + c)].eval(env);
  return out;
}

void CoefficientFn::check_signature(int n, int d, int p, int m) const {
  for (const auto& e : exprs) {
    if (e.max_index(VarSlot::X) > n || e.max_index(VarSlot::Y) > d ||
        e.max_index(VarSlot::Z) > p || e.max_index(VarSlot::W) > m)
      throw UnboundVariable("expression '" + e.print() +
                            "' references a variable outside the signature");
    if (e.root()) {
      bool named = false;
      visit(*e.root(), [&](const ExprNode& node) {
        if (node.op == ExprOp::Var && node.slot == VarSlot::Named &&
            node.name != "dt")
          named = true;
      });
      if (named)
        throw UnboundVariable("expression '" + e.print() + "' uses an unknown name");
    }
  }
}

bool CoefficientFn::zero() const {
  for (const auto& e : exprs)
    if (!e.root() || e.root()->op != ExprOp::Number || e.root()->number != 0.0)
      return false;
  return !exprs.empty();
}

}  // namespace fds
