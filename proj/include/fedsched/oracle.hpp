#pragma once

#include <cstdint>
#include <vector>

#include "fedsched/model.hpp"
#include "fedsched/types.hpp"

namespace fedsched {

// Budgets and tolerances for the exhaustive reference solvers.  These solvers
// exist to check the federated pipeline on small instances; they refuse
// instead of silently truncating when an instance is too large to enumerate.
struct OracleOptions {
  std::int64_t candidate_cap = 1 << 20; // slot-pattern products (shared band)
  std::int64_t node_cap = 5'000'000;    // search nodes (fixed-rate assignment)
  int theta_points = 401;               // dual grid, two demanders
  int theta_subdiv = 16;                // dual grid subdivisions, three demanders
  double service_tol = 1e-3;            // feasible when gamma >= 1 - service_tol
  double energy_slack = 1e-9;           // budget rounding slack, in budget units
};

struct OracleResult {
  bool feasible = false;
  bool refused = false;      // enumeration budget exceeded, nothing certified
  int t_star = 0;            // minimal feasible horizon (search variants)
  double gamma_star = 0;     // certified achievable service fraction (primal)
  double gamma_upper = 0;    // dual upper bound on the best service fraction
  double dual_gap = 0;       // gamma_upper - gamma_star
  Mat x;                     // slot assignment achieving gamma_star
  Mat w;                     // bandwidth split achieving gamma_star (shared band)
  Vec theta;                 // dual weights certifying gamma_upper
  std::int64_t enumerated = 0;
  double seconds = 0;
};

// Best weighted one-slot rate: maximize sum_m theta(m) * rate_m(w_m) over
// w >= 0, sum_m w_m <= 1, with w_m = 0 for users not in `scheduled`.  Exact
// water-filling by nested bisection on the shared marginal rate; fills the
// maximizing split into *w_out when given.
double max_weighted_slot_rate(const Vec& theta, const std::vector<int>& scheduled,
                              const ProblemInstance& inst, int slot, Vec* w_out = nullptr);

// Exhaustive reference for the shared-band program at the instance horizon:
// enumerates every maximal slot pattern (each demander holds exactly
// min(budget, horizon) slots), scores each with the dual of the inner
// bandwidth split, then polishes the winner.  gamma_upper is exact up to the
// dual grid; gamma_star is achieved by the reported (x, w).
OracleResult best_service_fraction(const ProblemInstance& inst,
                                   const OracleOptions& opt = {});

// Minimal horizon at which the shared-band program serves every demand in
// full (gamma >= 1 - service_tol), by scanning horizons upward.
OracleResult min_horizon_shared_band(const ProblemInstance& inst, int t_cap,
                                     const OracleOptions& opt = {});

// Minimal horizon for the fixed-rate assignment program: depth-first search
// over per-slot ownership with demand, reachability, and cheapest-completion
// pruning.  Exact; refuses past opt.node_cap nodes.
OracleResult min_horizon_fixed_rate(const ProblemInstance& inst, int t_cap,
                                    const OracleOptions& opt = {});

// Empirical per-edge rounding frequencies: mean of `draws` independent
// dependent-rounding draws of the fractional assignment.
Mat rounding_marginals_mc(const Mat& x_frac, int draws, std::uint64_t seed);

} // namespace fedsched
