#pragma once

#include <optional>
#include <vector>

#include "fds/picard.hpp"

namespace fds {

/// Subinterval boundaries aligned to tree levels.
struct Partition {
  std::vector<int> levels;        ///< boundary levels, levels.front() = 0
  std::vector<double> boundaries; ///< matching times
  double max_len = 0.0;

  int count() const { return static_cast<int>(levels.size()) - 1; }
};

Partition build_partition(const TimeGrid& grid, double max_len);

/// Random terminal condition theta_i: per node at its level, a piecewise
/// linear table over a uniform x grid with clamped extrapolation.
struct TerminalMap {
  int level = 0;
  double x_lo = 0.0, x_hi = 1.0;
  int grid_n = 3;
  std::vector<MatrixXd> tables;  ///< per node, d x grid_n
  double est_lipschitz = 0.0;
  std::optional<double> zhang_bound;

  double cell() const { return (x_hi - x_lo) / (grid_n - 1); }
  double grid_x(int g) const { return x_lo + g * cell(); }
  VectorXd eval(std::int64_t node, double x) const;
  double measure_lipschitz() const;
};

struct GlobalConfig {
  double x_lo = -1.0, x_hi = 1.0;
  int x_grid_n = 21;
  double max_len = 0.5;
  double min_len = 1e-3;
  PicardConfig picard;

  void validate() const;
};

struct IntervalReport {
  double t_lo = 0.0, t_hi = 0.0;
  int max_iterations = 0;
  double max_contraction = 0.0;
  double theta_lipschitz = 0.0;  ///< measured constant of the map built at t_lo
  std::optional<double> zhang_bound;
  double interface_mismatch = 0.0;  ///< at the interior boundary t_lo (0 for i = 0)
};

struct GlobalReport {
  Partition partition;
  std::vector<IntervalReport> intervals;
  double max_interface_mismatch = 0.0;
  int bisections = 0;
};

/// Heuristic x-range when none is configured.
std::pair<double, double> default_x_range(const Problem& problem,
                                          const ScenarioTree& tree);

/// Backward construction of the terminal maps theta_0 .. theta_{P-1}
/// (theta_P is the problem's own terminal function). Throws
/// SubintervalNonContractive when a subinterval solve diverges.
std::vector<TerminalMap> backward_terminal_maps(const Problem& problem,
                                                const ScenarioTree& tree,
                                                const Partition& part,
                                                const GlobalConfig& cfg);

std::pair<SolutionPair, GlobalReport> solve_global(const Problem& problem,
                                                   const ScenarioTree& tree,
                                                   const GlobalConfig& cfg);

/// Max |Y_0(x1) - Y_0(x2)| / |x1 - x2| over the given initial-value pairs.
double zhang_y0_lipschitz(const Problem& problem, const ScenarioTree& tree,
                          const std::vector<std::pair<double, double>>& x_pairs,
                          const PicardConfig& cfg = {});

/// The Zhang chain constant sqrt((C^2 + 1) e^{rho dt} - 1).
double zhang_chain(double lipschitz, double rho, double interval_len);

}  // namespace fds
