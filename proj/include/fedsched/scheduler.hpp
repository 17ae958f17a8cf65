#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedsched/adapters.hpp"
#include "fedsched/fedcore.hpp"
#include "fedsched/model.hpp"

namespace fedsched {

enum class RoundingMode { kSimple, kSmart };

struct PipelineOptions {
  FedHyper hyper;
  RoundingMode rounding = RoundingMode::kSimple;
  bool reoptimize = false;
  int rounding_draws = 5;
  double gamma_tol = 1e-3;      // service shortfall treated as feasible
  int horizon_cap = 4096;       // binary search upper limit
  double boost_cap_factor = 100.0;
  double boost_rel_precision = 1e-3;
  double min_block_progress = 0.01; // smallest service fraction a block may plan
  std::uint64_t seed = 1;
  MessageLog* tap = nullptr;
};

struct StageTimes {
  double solve_s = 0;
  double rounding_s = 0;
  double reopt_s = 0;
  double boost_s = 0;
  double total_s = 0;
};

// Output of one relaxed federated solve, after fractional repair.
struct FractionalSolution {
  Mat x;
  Mat w;               // empty for the fixed-rate program
  double gamma_solver = 0;
  double gamma_exact = 0; // exact min served fraction of the repaired shares
  bool solver_converged = false;
  bool feasible = false;  // probe verdict
  int outer_rounds = 0;
  double clamped_mass = 0;
  bool repaired = false;
};

struct ScheduleResult {
  bool feasible = false;
  int horizon_used = 0;
  Schedule schedule;
  FractionalSolution fractional;
  double gamma_final = 0;            // exact service level of the final schedule
  double boost_bandwidth_hz = 0;     // 0 when no boost was needed
  Vec boost_energy_j;                // per-user boosted budgets (fixed-rate)
  double boost_energy_total_j = 0;   // total extra energy granted
  int selected_draw = -1;
  bool integral_repaired = false;
  int outer_rounds_total = 0;
  StageTimes times;
  ViolationReport violations;        // final schedule against the instance
  std::string failure;               // why the pipeline gave up, when it did
};

struct BlockScheduleResult {
  std::vector<ScheduleResult> blocks;
  std::vector<double> planned_fractions;
  bool complete = false;
  double total_seconds = 0;
  std::string failure;
};

// Minimal feasible horizon by doubling then bisection over probe verdicts.
struct HorizonSearch {
  bool found = false;
  int horizon = 0;
  int probes = 0;
  FractionalSolution solution; // at the found horizon
};
HorizonSearch search_min_horizon(
    const std::function<std::optional<FractionalSolution>(int)>& probe, int horizon_cap);

// One relaxed federated solve of the bandwidth-sharing program, with
// fractional repair (share clamp, coupling, column normalization, slot-budget
// rescale) and an exact service verdict.  `remaining_slots` adds hard per-user
// slot caps carried across blocks.
FractionalSolution solve_bandwidth_relaxation(
    const ProblemInstance& inst, const PipelineOptions& opt,
    const std::optional<std::vector<double>>& remaining_slots = {});

// Same for the fixed-rate program: clamp, column normalization, demand lift
// with a greedy rebuild fallback, energy verdict within twice the multiplier
// tolerance.  allow_energy_overdraft skips the cheapest-completion precheck,
// for callers that plan an over-budget window and pay for it with an energy
// boost afterwards.
FractionalSolution solve_fixed_rate_relaxation(const ProblemInstance& inst,
                                               const PipelineOptions& opt,
                                               bool allow_energy_overdraft = false);

// Re-optimizes shares at fixed slots (federated), returning repaired shares
// and exact service level at inst.params.bandwidth_hz.
struct ReoptResult {
  Mat w;
  double gamma_solver = 0;
  double gamma_exact = 0;
  int outer_rounds = 0;
  bool converged = false;
};
ReoptResult reoptimize_shares(const ProblemInstance& inst, const Mat& x_fixed,
                              const PipelineOptions& opt, const Mat* warm_shares = nullptr,
                              double gamma_cap = std::numeric_limits<double>::infinity());

// Minimal bandwidth making the schedule serve gamma_target of every demand,
// by bisection on a multiplicative lattice.  With opt.reoptimize the shares
// are re-solved at every probe; otherwise they stay fixed.
struct BoostOutcome {
  bool ok = false;
  double bandwidth_hz = 0;
  Mat w;
  double gamma_exact = 0;
  int solves = 0;
};
BoostOutcome boost_bandwidth(const ProblemInstance& inst, const Mat& x_fixed, const Mat& w_fixed,
                             double gamma_target, const PipelineOptions& opt);

// Per-user boosted energy budgets covering exactly what the schedule burns.
Vec boost_energy(const ProblemInstance& inst, const Mat& x, MessageLog* tap = nullptr);

// Full pipelines.
ScheduleResult fair_point_schedule(const ProblemInstance& inst, const PipelineOptions& opt);
ScheduleResult feasible_slot_schedule(const ProblemInstance& inst, const PipelineOptions& opt);
BlockScheduleResult block_schedule(const ProblemInstance& inst, const PipelineOptions& opt);

} // namespace fedsched
