// Command-line driver: problem files in, machine-readable reports out.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include "json.hpp"
#include <sstream>

#include "CLI11.hpp"
#include "fds/global.hpp"
#include "fds/problem_io.hpp"
#include "fds/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fds;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNonContractive = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitPartition = 5;
constexpr int kExitCheckFailed = 6;
constexpr const char* kToolVersion = "0.1.0";

struct CommonFlags {
  std::string problem_ref;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int steps = -1;
  double T = -1.0;
  double max_len = -1.0;
  std::vector<double> x_grid;  ///< lo hi points
  bool canonical = false;
  bool dump_nodes = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_problem) {
  if (needs_problem)
    cmd->add_option("problem", flags.problem_ref,
                    "problem file path or builtin:NAME")
        ->required();
  cmd->add_option("--out", flags.out_dir, "output directory for reports");
  cmd->add_option("--seed", flags.seed, "seed for sampled certificates");
  cmd->add_option("--steps", flags.steps, "override the number of time steps");
  cmd->add_option("--T", flags.T, "override the horizon");
  cmd->add_option("--max-len", flags.max_len, "override the max subinterval length");
  cmd->add_option("--x-grid", flags.x_grid,
                  "override the terminal-map grid: lo hi points")
      ->expected(3);
  cmd->add_flag("--canonical", flags.canonical,
                "omit timing so identical runs produce identical bytes");
  cmd->add_flag("--dump-nodes", flags.dump_nodes,
                "also write per-node values (steps <= 10 only)");
}

ProblemConfig resolve(const CommonFlags& flags) {
  ProblemConfig cfg = resolve_problem(flags.problem_ref);
  if (flags.steps > 0) cfg.steps = flags.steps;
  if (flags.T > 0.0) cfg.T = flags.T;
  if (flags.max_len > 0.0) cfg.global.max_len = flags.max_len;
  if (!flags.x_grid.empty()) {
    cfg.global.x_lo = flags.x_grid[0];
    cfg.global.x_hi = flags.x_grid[1];
    cfg.global.x_grid_n = static_cast<int>(flags.x_grid[2]);
    cfg.has_global = true;
  }
  return cfg;
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

double pairwise_std(const Eigen::VectorXd& values, double mean) {
  Eigen::VectorXd sq = (values.array() - mean).square();
  return std::sqrt(std::max(0.0, pairwise_mean(sq)));
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

/// Per-level distribution summary of X, Y, V (first components).
std::string series_csv(const ScenarioTree& tree, const AdaptedProcess& X,
                       const AdaptedProcess& Y, const AdaptedProcess& V) {
  std::ostringstream out;
  out << "level,time,mean_X,std_X,mean_Y,std_Y,mean_V,std_V\n";
  for (int k = 0; k < tree.levels(); ++k) {
    Eigen::VectorXd xs = X.at(k).row(0).transpose();
    Eigen::VectorXd ys = Y.at(k).row(0).transpose();
    Eigen::VectorXd vs = V.at(k).row(0).transpose();
    const double mx = pairwise_mean(xs), my = pairwise_mean(ys),
                 mv = pairwise_mean(vs);
    out << k << ',' << format_number(tree.grid().time(k)) << ','
        << format_number(mx) << ',' << format_number(pairwise_std(xs, mx)) << ','
        << format_number(my) << ',' << format_number(pairwise_std(ys, my)) << ','
        << format_number(mv) << ',' << format_number(pairwise_std(vs, mv)) << '\n';
  }
  return out.str();
}

std::string nodes_csv(const ScenarioTree& tree, const Problem& problem,
                      const AdaptedProcess& X, const AdaptedProcess& Y,
                      const AdaptedProcess& V) {
  std::ostringstream out;
  out << "level,node";
  for (int j = 1; j <= problem.m; ++j) out << ",w" << j;
  for (int r = 1; r <= problem.n; ++r) out << ",x" << r;
  for (int r = 1; r <= problem.d; ++r) out << ",y" << r;
  for (int r = 1; r <= problem.d; ++r) out << ",v" << r;
  out << '\n';
  for (int k = 0; k < tree.levels(); ++k)
    for (std::int64_t i = 0; i < tree.nodes_at(k); ++i) {
      out << k << ',' << i;
      for (int j = 0; j < problem.m; ++j)
        out << ',' << format_number(tree.walk(k)(j, i));
      for (int r = 0; r < problem.n; ++r)
        out << ',' << format_number(X.at(k)(r, i));
      for (int r = 0; r < problem.d; ++r)
        out << ',' << format_number(Y.at(k)(r, i));
      for (int r = 0; r < problem.d; ++r)
        out << ',' << format_number(V.at(k)(r, i));
      out << '\n';
    }
  return out.str();
}

json conditions_json(const AssumptionReport& report) {
  json arr = json::array();
  for (const auto& c : report.conditions)
    arr.push_back({{"name", c.name},
                   {"max_violation", c.max_violation},
                   {"samples", c.samples},
                   {"pass", c.pass},
                   {"informational", c.informational}});
  return {{"pass", report.pass}, {"conditions", arr}};
}

json picard_json(const PicardReport& r) {
  return {{"converged", r.converged},
          {"iterations", r.iterations},
          {"distances", r.distances},
          {"contraction_ratios", r.contraction_ratios},
          {"forward_residual", r.forward_residual},
          {"backward_residual", r.backward_residual}};
}

json global_json(const GlobalReport& r) {
  json intervals = json::array();
  for (const auto& iv : r.intervals) {
    json obj = {{"bounds", json::array({iv.t_lo, iv.t_hi})},
                {"iterations", iv.max_iterations},
                {"contraction", iv.max_contraction},
                {"theta_lipschitz", iv.theta_lipschitz},
                {"interface_mismatch", iv.interface_mismatch}};
    if (iv.zhang_bound) obj["zhang_bound"] = *iv.zhang_bound;
    intervals.push_back(obj);
  }
  return {{"intervals", intervals},
          {"max_interface_mismatch", r.max_interface_mismatch},
          {"bisections", r.bisections}};
}

json base_report(const CommonFlags& flags, const ProblemConfig& cfg,
                 const std::string& command) {
  json doc;
  doc["command"] = command;
  doc["seed"] = flags.seed;
  doc["versions"] = {{"schema", 1}, {"tool", kToolVersion}};
  doc["config"] = json::parse(problem_to_json(cfg));
  return doc;
}

void attach_timing(json& doc, const CommonFlags& flags,
                   std::chrono::steady_clock::time_point start) {
  if (flags.canonical) return;
  const auto elapsed = std::chrono::duration<double, std::milli>(
      std::chrono::steady_clock::now() - start);
  doc["timing"] = {{"wall_ms", elapsed.count()}};
}

/// Residuals and Y of a solved pair, shared by both solve commands.
void attach_solution(json& doc, const ProblemConfig& cfg, const ScenarioTree& tree,
                     const SolutionPair& sol, const CommonFlags& flags) {
  FbsdeTriple triple = to_fbsde_triple(cfg.problem, tree, sol);
  BackwardResiduals back = backward_residual(cfg.problem, tree, triple, sol.V);
  doc["residuals"] = {{"forward", forward_residual(cfg.problem, tree, triple)},
                      {"backward_dynamics", back.dynamics},
                      {"backward_terminal", back.terminal}};
  json y0 = json::array();
  for (int r = 0; r < cfg.problem.d; ++r) y0.push_back(triple.Y.at(0)(r, 0));
  doc["y0"] = y0;
  write_atomic(fs::path(flags.out_dir) / "series.csv",
               series_csv(tree, sol.X, triple.Y, sol.V));
  if (flags.dump_nodes) {
    if (cfg.steps > 10)
      throw ValidationError("--dump-nodes supports at most 10 steps");
    write_atomic(fs::path(flags.out_dir) / "nodes.csv",
                 nodes_csv(tree, cfg.problem, sol.X, triple.Y, sol.V));
  }
}

int finish(const json& doc, const CommonFlags& flags) {
  write_atomic(fs::path(flags.out_dir) / "report.json", doc.dump(2) + "\n");
  return kExitOk;
}

int fail_with(const CommonFlags& flags, json doc, const std::string& error,
              int code) {
  doc["error"] = error;
  doc["exit_code"] = code;
  std::cerr << "error: " << error << '\n';
  try {
    write_atomic(fs::path(flags.out_dir) / "report.json", doc.dump(2) + "\n");
  } catch (const std::exception&) {
  }
  return code;
}

int cmd_solve_local(const CommonFlags& flags) {
  const auto start = std::chrono::steady_clock::now();
  ProblemConfig cfg = resolve(flags);
  json doc = base_report(flags, cfg, "solve-local");
  try {
    ScenarioTree tree = cfg.make_tree();
    auto [sol, report] = solve_local(cfg.problem, tree, cfg.picard);
    doc["picard"] = picard_json(report);
    attach_solution(doc, cfg, tree, sol, flags);
    attach_timing(doc, flags, start);
    return finish(doc, flags);
  } catch (const NonContractive& e) {
    return fail_with(flags, doc, e.what(), kExitNonContractive);
  } catch (const NonFinite& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  } catch (const DomainError& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  } catch (const MaxIterExceeded& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  }
}

int cmd_solve_global(const CommonFlags& flags) {
  const auto start = std::chrono::steady_clock::now();
  ProblemConfig cfg = resolve(flags);
  json doc = base_report(flags, cfg, "solve-global");
  try {
    ScenarioTree tree = cfg.make_tree();
    if (!cfg.has_global) {
      auto range = default_x_range(cfg.problem, tree);
      cfg.global.x_lo = range.first;
      cfg.global.x_hi = range.second;
    }
    cfg.global.picard = cfg.picard;
    auto [sol, report] = solve_global(cfg.problem, tree, cfg.global);
    doc["global"] = global_json(report);
    attach_solution(doc, cfg, tree, sol, flags);
    attach_timing(doc, flags, start);
    return finish(doc, flags);
  } catch (const PartitionExhausted& e) {
    return fail_with(flags, doc, e.what(), kExitPartition);
  } catch (const GridOutOfRange& e) {
    return fail_with(flags, doc, e.what(), kExitPartition);
  } catch (const NonContractive& e) {
    return fail_with(flags, doc, e.what(), kExitNonContractive);
  } catch (const NonFinite& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  } catch (const DomainError& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  } catch (const MaxIterExceeded& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  }
}

int cmd_check(const CommonFlags& flags, bool a1, bool a2, bool l1, bool ym) {
  const auto start = std::chrono::steady_clock::now();
  ProblemConfig cfg = resolve(flags);
  json doc = base_report(flags, cfg, "check");
  if (!a1 && !a2 && !l1 && !ym) a1 = l1 = ym = true;  // default set
  try {
    ScenarioTree tree = cfg.make_tree();
    cfg.problem.validate(tree);
    bool all_pass = true;
    if (a1) {
      AssumptionReport r = check_A1(cfg.problem, tree, 400, flags.seed);
      doc["a1"] = conditions_json(r);
      all_pass = all_pass && r.pass;
    }
    if (a2) {
      AssumptionReport r = check_A2(cfg.problem, tree, 64, 32, flags.seed);
      doc["a2"] = conditions_json(r);
      all_pass = all_pass && r.pass;
    }
    if (l1) {
      json ops = json::object();
      const std::pair<const char*, const OperatorKind*> kinds[] = {
          {"L1", &cfg.problem.ops.L1},
          {"L2", &cfg.problem.ops.L2},
          {"L3", &cfg.problem.ops.L3}};
      for (const auto& [name, kind] : kinds) {
        L1Report r = check_L1(*kind, tree, cfg.problem.d, 50, flags.seed);
        ops[name] = {{"samples", r.samples},
                     {"max_boundedness_ratio", r.max_boundedness_ratio},
                     {"max_lipschitz_ratio", r.max_lipschitz_ratio},
                     {"declared_K", r.declared_K},
                     {"pass", r.pass}};
        all_pass = all_pass && r.pass;
      }
      doc["l1"] = ops;
    }
    if (ym) {
      AssumptionReport r = check_ym_lipschitz(tree, cfg.problem.terminal,
                                              cfg.problem.n, 200, flags.seed);
      doc["ym"] = conditions_json(r);
      all_pass = all_pass && r.pass;
    }
    doc["pass"] = all_pass;
    attach_timing(doc, flags, start);
    write_atomic(fs::path(flags.out_dir) / "report.json", doc.dump(2) + "\n");
    return all_pass ? kExitOk : kExitCheckFailed;
  } catch (const NonFinite& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  } catch (const DomainError& e) {
    return fail_with(flags, doc, e.what(), kExitNumeric);
  }
}

int cmd_bench(const CommonFlags& flags) {
  std::ostringstream out;
  out << "name,steps,status,y0,y0_error,iterations,contraction,runtime_ms\n";
  const std::map<std::string, double> oracles = {{"zero", 1.0},
                                                 {"riccati", 0.5}};
  for (const std::string& name : builtin_names()) {
    for (int steps : {6, 8, 10, 12}) {
      ProblemConfig cfg = make_builtin(name);
      cfg.steps = steps;
      const auto start = std::chrono::steady_clock::now();
      std::string status = "ok";
      double y0 = 0.0;
      int iterations = 0;
      double contraction = 0.0;
      try {
        ScenarioTree tree = cfg.make_tree();
        auto [sol, report] = solve_local(cfg.problem, tree, cfg.picard);
        MartingaleProcess M =
            apply_M(tree, cfg.problem.terminal, sol.X, sol.V);
        y0 = M.base.at(0)(0, 0) - sol.V.at(0)(0, 0);
        iterations = report.iterations;
        if (!report.contraction_ratios.empty())
          contraction = report.contraction_ratios.back();
      } catch (const NonContractive&) {
        status = "non-contractive";
      } catch (const Error& e) {
        status = std::string("error: ") + e.what();
      }
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start)
                            .count();
      out << name << ',' << steps << ',' << status << ',';
      if (status == "ok") {
        out << format_number(y0) << ',';
        auto it = oracles.find(name);
        if (it != oracles.end())
          out << format_number(std::abs(y0 - it->second));
        out << ',' << iterations << ',' << format_number(contraction);
      } else {
        out << ",,,";
      }
      out << ',' << (flags.canonical ? std::string()
                                     : format_number(ms))
          << '\n';
    }
  }
  write_atomic(fs::path(flags.out_dir) / "bench.csv", out.str());
  std::cout << out.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scenario-tree solver for coupled forward functional systems"};
  app.require_subcommand(1);

  CommonFlags local_flags, global_flags, check_flags, bench_flags;
  bool a1 = false, a2 = false, l1 = false, ym = false;

  CLI::App* solve_local_cmd =
      app.add_subcommand("solve-local", "fixed-point solve on one horizon");
  add_common(solve_local_cmd, local_flags, true);

  CLI::App* solve_global_cmd =
      app.add_subcommand("solve-global", "interval-stitched solve");
  add_common(solve_global_cmd, global_flags, true);

  CLI::App* check_cmd =
      app.add_subcommand("check", "sampled assumption certificates");
  add_common(check_cmd, check_flags, true);
  check_cmd->add_flag("--a1", a1, "monotonicity/Lipschitz/growth conditions");
  check_cmd->add_flag("--a2", a2, "sign condition on the unit sphere");
  check_cmd->add_flag("--l1", l1, "operator boundedness/Lipschitz");
  check_cmd->add_flag("--ym", ym, "terminal-map Lipschitz estimates");

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "run the builtin registry across step counts");
  add_common(bench_cmd, bench_flags, false);

  CLI::App* list_cmd = app.add_subcommand("list-builtins", "print builtin names");
  std::string list_out;  // accepted for interface uniformity; nothing is written
  list_cmd->add_option("--out", list_out, "output directory (unused)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve_local_cmd->parsed()) return cmd_solve_local(local_flags);
    if (solve_global_cmd->parsed()) return cmd_solve_global(global_flags);
    if (check_cmd->parsed()) return cmd_check(check_flags, a1, a2, l1, ym);
    if (bench_cmd->parsed()) return cmd_bench(bench_flags);
    if (list_cmd->parsed()) {
      for (const auto& name : builtin_names()) std::cout << name << '\n';
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ScopeViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const InvalidGrid& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const BudgetExceeded& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitValidation;
}
