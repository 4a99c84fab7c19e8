#pragma once

#include <string>
#include <vector>

#include "fds/global.hpp"
#include "fds/picard.hpp"

namespace fds {

/// A fully resolved run configuration: the problem plus grid and solver
/// settings, as read from a problem file or the builtin registry.
struct ProblemConfig {
  Problem problem;
  double T = 1.0;
  double tau = 0.0;
  int steps = 8;
  PicardConfig picard;
  GlobalConfig global;
  bool has_global = false;
  std::string name;

  ScenarioTree make_tree(std::int64_t node_cap = (std::int64_t{1} << 24)) const;
};

/// Parses the versioned JSON problem document ("schema": 1). Unknown keys
/// and shape mismatches raise ValidationError before any computation.
ProblemConfig parse_problem_json(const std::string& text);
ProblemConfig load_problem_file(const std::string& path);

/// Serializes a config back to its JSON document form.
std::string problem_to_json(const ProblemConfig& cfg);

/// Builtin registry: "zero", "riccati", "decoupled_identity", "lookback",
/// "asian", "delayed", "incomplete", "counterexample", "bad_lipschitz".
std::vector<std::string> builtin_names();
ProblemConfig make_builtin(const std::string& name);

/// Resolves "builtin:NAME" against the registry, otherwise reads a file path.
ProblemConfig resolve_problem(const std::string& ref);

}  // namespace fds
