#include "fds/problem_io.hpp"

#include <fstream>
#include "json.hpp"
#include <sstream>

namespace fds {

using nlohmann::json;

namespace {

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ValidationError(where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed)
      if (item.key() == key) ok = true;
    if (!ok)
      throw ValidationError("unknown key \"" + item.key() + "\" in " + where);
  }
}

void require(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key))
    throw ValidationError(where + " is missing key \"" + key + "\"");
}

std::vector<std::string> string_list(const json& v, const std::string& where) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_string())
        throw ValidationError(where + " must contain expression strings");
      out.push_back(e.get<std::string>());
    }
  } else {
    throw ValidationError(where + " must be a string or array of strings");
  }
  return out;
}

VectorXd number_list(const json& v, const std::string& where) {
  if (v.is_number()) return VectorXd::Constant(1, v.get<double>());
  if (!v.is_array())
    throw ValidationError(where + " must be a number or array of numbers");
  VectorXd out(v.size());
  int i = 0;
  for (const auto& e : v) {
    if (!e.is_number()) throw ValidationError(where + " must be numeric");
    out(i++) = e.get<double>();
  }
  return out;
}

OperatorVariant variant_from_name(const std::string& name,
                                  const std::string& where) {
  if (name == "ito") return OperatorVariant::Ito;
  if (name == "identity") return OperatorVariant::Identity;
  if (name == "cond_qv") return OperatorVariant::CondQV;
  if (name == "running_qv") return OperatorVariant::RunningQV;
  if (name == "residual_qv") return OperatorVariant::ResidualQV;
  if (name == "delayed") return OperatorVariant::Delayed;
  throw ValidationError("unknown operator variant \"" + name + "\" in " + where);
}

const char* variant_name(OperatorVariant v) {
  switch (v) {
    case OperatorVariant::Ito: return "ito";
    case OperatorVariant::Identity: return "identity";
    case OperatorVariant::CondQV: return "cond_qv";
    case OperatorVariant::RunningQV: return "running_qv";
    case OperatorVariant::ResidualQV: return "residual_qv";
    case OperatorVariant::Delayed: return "delayed";
  }
  return "ito";
}

OperatorKind parse_operator(const json& obj, const std::string& where,
                            double default_K) {
  expect_keys(obj, where, {"variant", "base", "alpha_z", "K"});
  require(obj, where, "variant");
  OperatorKind kind;
  kind.variant = variant_from_name(obj.at("variant").get<std::string>(), where);
  kind.K = obj.value("K", default_K);
  if (obj.contains("base")) {
    if (kind.variant != OperatorVariant::Delayed)
      throw ValidationError(where + ": \"base\" only applies to delayed");
    kind.base = variant_from_name(obj.at("base").get<std::string>(), where);
  }
  if (obj.contains("alpha_z")) {
    if (kind.variant != OperatorVariant::Delayed)
      throw ValidationError(where + ": \"alpha_z\" only applies to delayed");
    for (const auto& pair : obj.at("alpha_z")) {
      if (!pair.is_array() || pair.size() != 2)
        throw ValidationError(where + ": alpha_z entries are [offset, weight]");
      const int offset = pair.at(0).get<int>();
      const double weight = pair.at(1).get<double>();
      if (offset > 0)
        throw ValidationError(where + ": alpha_z offsets must be <= 0");
      kind.alpha_z.emplace_back(offset, weight);
    }
  } else if (kind.variant == OperatorVariant::Delayed) {
    throw ValidationError(where + ": delayed requires alpha_z");
  }
  return kind;
}

json operator_to_json(const OperatorKind& kind) {
  json obj;
  obj["variant"] = variant_name(kind.variant);
  obj["K"] = kind.K;
  if (kind.variant == OperatorVariant::Delayed) {
    obj["base"] = variant_name(kind.base);
    json alpha = json::array();
    for (const auto& [offset, weight] : kind.alpha_z)
      alpha.push_back(json::array({offset, weight}));
    obj["alpha_z"] = alpha;
  }
  return obj;
}

}  // namespace

ScenarioTree ProblemConfig::make_tree(std::int64_t node_cap) const {
  return build_tree(T, tau, steps, problem.m, node_cap);
}

ProblemConfig parse_problem_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("problem file is not valid JSON: ") + e.what());
  }
  expect_keys(doc, "document",
              {"schema", "name", "dims", "horizon", "coefficients", "terminal",
               "operators", "initial", "measures", "constants", "solver",
               "global"});
  require(doc, "document", "schema");
  if (!doc.at("schema").is_number_integer() || doc.at("schema").get<int>() != 1)
    throw ValidationError("unsupported schema version (expected 1)");
  for (const char* key : {"dims", "horizon", "coefficients", "terminal",
                          "operators", "initial", "constants"})
    require(doc, "document", key);

  ProblemConfig cfg;
  cfg.name = doc.value("name", std::string("unnamed"));

  const json& dims = doc.at("dims");
  expect_keys(dims, "dims", {"n", "d", "m"});
  for (const char* key : {"n", "d", "m"}) require(dims, "dims", key);
  Problem& p = cfg.problem;
  p.n = dims.at("n").get<int>();
  p.d = dims.at("d").get<int>();
  p.m = dims.at("m").get<int>();

  const json& horizon = doc.at("horizon");
  expect_keys(horizon, "horizon", {"T", "tau", "steps"});
  require(horizon, "horizon", "T");
  require(horizon, "horizon", "steps");
  cfg.T = horizon.at("T").get<double>();
  cfg.tau = horizon.value("tau", 0.0);
  cfg.steps = horizon.at("steps").get<int>();

  const json& constants = doc.at("constants");
  expect_keys(constants, "constants", {"C", "C_prime", "K", "gamma", "rho_C"});
  require(constants, "constants", "C");
  p.lipschitz_C = constants.at("C").get<double>();
  const double default_K = constants.value("K", 1.0);
  if (constants.contains("gamma")) p.gamma = constants.at("gamma").get<double>();
  if (constants.contains("rho_C")) p.rho_C = constants.at("rho_C").get<double>();

  const json& ops = doc.at("operators");
  expect_keys(ops, "operators", {"L1", "L2", "L3"});
  for (const char* key : {"L1", "L2", "L3"}) require(ops, "operators", key);
  p.ops.L1 = parse_operator(ops.at("L1"), "operators.L1", default_K);
  p.ops.L2 = parse_operator(ops.at("L2"), "operators.L2", default_K);
  p.ops.L3 = parse_operator(ops.at("L3"), "operators.L3", default_K);

  const json& coeff = doc.at("coefficients");
  expect_keys(coeff, "coefficients", {"mu", "sigma", "f"});
  for (const char* key : {"mu", "sigma", "f"}) require(coeff, "coefficients", key);
  try {
    p.mu = CoefficientFn::from_strings(
        string_list(coeff.at("mu"), "coefficients.mu"), p.n, 1);
    p.sigma = CoefficientFn::from_strings(
        string_list(coeff.at("sigma"), "coefficients.sigma"), p.n, p.m);
    p.f = CoefficientFn::from_strings(string_list(coeff.at("f"), "coefficients.f"),
                                      p.d, 1);
  } catch (const ParseError& e) {
    throw ValidationError(std::string("bad coefficient expression: ") + e.what());
  }

  const json& terminal = doc.at("terminal");
  expect_keys(terminal, "terminal", {"kind", "expr", "lipschitz"});
  require(terminal, "terminal", "kind");
  require(terminal, "terminal", "expr");
  const std::string kind = terminal.at("kind").get<std::string>();
  const auto exprs = string_list(terminal.at("expr"), "terminal.expr");
  const double lipschitz =
      terminal.value("lipschitz", constants.value("C_prime", 1.0));
  try {
    if (kind == "pointwise")
      p.terminal = TerminalSpec::pointwise(exprs, lipschitz);
    else if (kind == "sup")
      p.terminal = TerminalSpec::path_sup(exprs, lipschitz);
    else if (kind == "integral")
      p.terminal = TerminalSpec::path_integral(exprs, lipschitz);
    else
      throw ValidationError("terminal.kind must be pointwise, sup or integral");
  } catch (const ParseError& e) {
    throw ValidationError(std::string("bad terminal expression: ") + e.what());
  }
  if (static_cast<int>(exprs.size()) != p.d)
    throw ValidationError("terminal.expr must have d components");

  const json& initial = doc.at("initial");
  expect_keys(initial, "initial", {"x0", "v0"});
  require(initial, "initial", "x0");
  p.x0 = number_list(initial.at("x0"), "initial.x0");
  p.v0 = initial.contains("v0") ? number_list(initial.at("v0"), "initial.v0")
                                : VectorXd::Zero(p.d).eval();
  if (p.x0.size() != p.n) throw ValidationError("initial.x0 must have size n");
  if (p.v0.size() != p.d) throw ValidationError("initial.v0 must have size d");

  if (doc.contains("measures")) {
    const json& measures = doc.at("measures");
    expect_keys(measures, "measures", {"alpha_V"});
    if (measures.contains("alpha_V")) {
      const VectorXd weights = number_list(measures.at("alpha_V"), "measures.alpha_V");
      p.alpha_v.assign(weights.data(), weights.data() + weights.size());
    }
  }

  if (doc.contains("solver")) {
    const json& solver = doc.at("solver");
    expect_keys(solver, "solver", {"tol", "max_iter", "divergence_window"});
    cfg.picard.tol = solver.value("tol", cfg.picard.tol);
    cfg.picard.max_iter = solver.value("max_iter", cfg.picard.max_iter);
    cfg.picard.divergence_window =
        solver.value("divergence_window", cfg.picard.divergence_window);
  }
  cfg.global.picard = cfg.picard;

  if (doc.contains("global")) {
    const json& glob = doc.at("global");
    expect_keys(glob, "global", {"x_grid", "max_len", "min_len"});
    cfg.has_global = true;
    if (glob.contains("x_grid")) {
      const json& grid = glob.at("x_grid");
      if (!grid.is_array() || grid.size() != 3)
        throw ValidationError("global.x_grid must be [lo, hi, points]");
      cfg.global.x_lo = grid.at(0).get<double>();
      cfg.global.x_hi = grid.at(1).get<double>();
      cfg.global.x_grid_n = grid.at(2).get<int>();
    }
    cfg.global.max_len = glob.value("max_len", cfg.global.max_len);
    cfg.global.min_len = glob.value("min_len", cfg.global.min_len);
  }
  return cfg;
}

ProblemConfig load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read problem file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_problem_json(buf.str());
}

std::string problem_to_json(const ProblemConfig& cfg) {
  const Problem& p = cfg.problem;
  json doc;
  doc["schema"] = 1;
  doc["name"] = cfg.name;
  doc["dims"] = {{"n", p.n}, {"d", p.d}, {"m", p.m}};
  doc["horizon"] = {{"T", cfg.T}, {"tau", cfg.tau}, {"steps", cfg.steps}};
  auto expr_array = [](const CoefficientFn& fn) {
    json arr = json::array();
    for (const auto& e : fn.exprs) arr.push_back(e.print());
    return arr;
  };
  doc["coefficients"] = {{"mu", expr_array(p.mu)},
                         {"sigma", expr_array(p.sigma)},
                         {"f", expr_array(p.f)}};
  const char* kind = "pointwise";
  if (p.terminal.kind == TerminalSpec::Kind::PathSup) kind = "sup";
  if (p.terminal.kind == TerminalSpec::Kind::PathIntegral) kind = "integral";
  json texprs = json::array();
  for (const auto& e : p.terminal.exprs) texprs.push_back(e.print());
  doc["terminal"] = {{"kind", kind},
                     {"expr", texprs},
                     {"lipschitz", p.terminal.lipschitz}};
  doc["operators"] = {{"L1", operator_to_json(p.ops.L1)},
                      {"L2", operator_to_json(p.ops.L2)},
                      {"L3", operator_to_json(p.ops.L3)}};
  doc["initial"] = {
      {"x0", std::vector<double>(p.x0.data(), p.x0.data() + p.x0.size())},
      {"v0", std::vector<double>(p.v0.data(), p.v0.data() + p.v0.size())}};
  if (!p.alpha_v.empty()) doc["measures"] = {{"alpha_V", p.alpha_v}};
  json constants = {{"C", p.lipschitz_C}};
  if (p.gamma) constants["gamma"] = *p.gamma;
  if (p.rho_C) constants["rho_C"] = *p.rho_C;
  doc["constants"] = constants;
  doc["solver"] = {{"tol", cfg.picard.tol},
                   {"max_iter", cfg.picard.max_iter},
                   {"divergence_window", cfg.picard.divergence_window}};
  if (cfg.has_global)
    doc["global"] = {
        {"x_grid",
         json::array({cfg.global.x_lo, cfg.global.x_hi, cfg.global.x_grid_n})},
        {"max_len", cfg.global.max_len},
        {"min_len", cfg.global.min_len}};
  return doc.dump(2);
}

namespace {

const char* builtin_source(const std::string& name) {
  if (name == "zero")
    return R"({
      "schema": 1, "name": "zero",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["0"], "sigma": ["0"], "f": ["0"]},
      "terminal": {"kind": "pointwise", "expr": ["1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [0.0], "v0": [0.0]},
      "constants": {"C": 1.0, "rho_C": 2.0},
      "global": {"x_grid": [-2.0, 2.0, 11], "max_len": 0.5, "min_len": 0.001}
    })";
  if (name == "riccati")
    return R"({
      "schema": 1, "name": "riccati",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["-y1"], "sigma": ["1"], "f": ["0"]},
      "terminal": {"kind": "pointwise", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [1.0], "v0": [0.0]},
      "constants": {"C": 1.0, "gamma": 0.5, "rho_C": 2.0},
      "global": {"x_grid": [-4.0, 5.0, 46], "max_len": 0.5, "min_len": 0.001}
    })";
  if (name == "decoupled_identity")
    return R"({
      "schema": 1, "name": "decoupled_identity",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["0"], "sigma": ["1"], "f": ["y1"]},
      "terminal": {"kind": "pointwise", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [0.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "lookback")
    return R"({
      "schema": 1, "name": "lookback",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["0"], "sigma": ["1"], "f": ["0"]},
      "terminal": {"kind": "sup", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [0.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "asian")
    return R"({
      "schema": 1, "name": "asian",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["0"], "sigma": ["1"], "f": ["0"]},
      "terminal": {"kind": "integral", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [1.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "delayed")
    return R"({
      "schema": 1, "name": "delayed",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["-0.5*z1"], "sigma": ["1"], "f": ["0"]},
      "terminal": {"kind": "pointwise", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "delayed", "base": "ito",
                           "alpha_z": [[0, 0.5], [-1, 0.5]], "K": 1.0},
                    "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [1.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "incomplete")
    return R"({
      "schema": 1, "name": "incomplete",
      "dims": {"n": 1, "d": 1, "m": 2},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 6},
      "coefficients": {"mu": ["-y1"], "sigma": ["1", "0"], "f": ["0"]},
      "terminal": {"kind": "pointwise", "expr": ["x1 + w1*w2"], "lipschitz": 2.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [1.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "counterexample")
    return R"({
      "schema": 1, "name": "counterexample",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["(y1 - x1)/dt"], "sigma": ["0"], "f": ["0"]},
      "terminal": {"kind": "pointwise", "expr": ["x1 + w1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [0.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  if (name == "bad_lipschitz")
    return R"({
      "schema": 1, "name": "bad_lipschitz",
      "dims": {"n": 1, "d": 1, "m": 1},
      "horizon": {"T": 1.0, "tau": 0.0, "steps": 8},
      "coefficients": {"mu": ["0"], "sigma": ["1"], "f": ["x1^2"]},
      "terminal": {"kind": "pointwise", "expr": ["x1"], "lipschitz": 1.0},
      "operators": {"L1": {"variant": "ito"}, "L2": {"variant": "identity"},
                    "L3": {"variant": "ito"}},
      "initial": {"x0": [1.0], "v0": [0.0]},
      "constants": {"C": 1.0}
    })";
  return nullptr;
}

}  // namespace

std::vector<std::string> builtin_names() {
  return {"zero",    "riccati",    "decoupled_identity",
          "lookback", "asian",     "delayed",
          "incomplete", "counterexample", "bad_lipschitz"};
}

ProblemConfig make_builtin(const std::string& name) {
  const char* src = builtin_source(name);
  if (!src) throw ValidationError("unknown builtin \"" + name + "\"");
  return parse_problem_json(src);
}

ProblemConfig resolve_problem(const std::string& ref) {
  if (ref.rfind("builtin:", 0) == 0) return make_builtin(ref.substr(8));
  return load_problem_file(ref);
}

}  // namespace fds
