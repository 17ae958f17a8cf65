#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "fedsched/fedcore.hpp"
#include "fedsched/model.hpp"

namespace fedsched {

// Per-slot energy cost (power * slot / budget) is capped at this many budgets;
// keeps constraint rows O(1) even for dead slots no schedule should touch, and
// marks a slot as effectively unusable for repair heuristics.
inline constexpr double kSlotCostCap = 50.0;

// Shared-iterate layout for the bandwidth-sharing programs:
// [ x (N*T) | w (N*T) | gamma ].
struct BandwidthLayout {
  int n = 0, horizon = 0;
  int x(int m, int t) const { return m * horizon + t; }
  int w(int m, int t) const { return n * horizon + m * horizon + t; }
  int gamma() const { return 2 * n * horizon; }
  int dim() const { return 2 * n * horizon + 1; }
};

// Fixed-rate layout: [ x (N*T) ].
struct FixedRateLayout {
  int n = 0, horizon = 0;
  int x(int m, int t) const { return m * horizon + t; }
  int dim() const { return n * horizon; }
};

// A ready-to-run federated problem: coordinator data, one client per user,
// and a neutral start point.
struct FedSetup {
  std::shared_ptr<CoordinatorProblem> coordinator;
  std::vector<FedClient> clients;
  Vec phi0;
  BandwidthLayout bw_layout;   // valid for bandwidth setups
  FixedRateLayout fr_layout;   // valid for fixed-rate setups
};

// Bandwidth-sharing program (joint slot + share + service fraction).  The
// per-block variant couples the slot budget to gamma and caps gamma at 1;
// remaining_slots adds a hard per-user cap carried across blocks.
FedSetup make_bandwidth_setup(const ProblemInstance& inst,
                              const std::optional<std::vector<double>>& remaining_slots = {});

// Share re-optimization at fixed slot assignment: variables [ w | gamma ],
// with w boxed into [0, x_fixed].  gamma_cap bounds the service variable on
// top of the per-block cap; a finite cap turns the open-ended maximization
// into a feasibility check, which converges far faster when the achievable
// service level is much higher than anyone needs.
FedSetup make_reopt_setup(const ProblemInstance& inst, const Mat& x_fixed,
                          double gamma_cap = std::numeric_limits<double>::infinity());

// Fixed-rate slot assignment feasibility program.
FedSetup make_fixed_rate_setup(const ProblemInstance& inst);

// Exact client-side evaluations, exposed as boundary reports.
// Fraction of the demand target served by share row `w_row` (+inf if the
// user demands nothing).
double served_fraction(const UserBandwidthData& u, const SystemParams& params,
                       const Vec& w_row);
// Fraction of the energy budget burned by slot row `x_row`.
double energy_fraction(const UserFixedRateData& u, const SystemParams& params,
                       const Vec& x_row);

// Smallest served fraction across users; the exact service level of a share
// matrix.  Reports one ClientReport per user into `tap` when given.
double min_served_fraction(const ProblemInstance& inst, const Mat& w,
                           double bandwidth_hz, MessageLog* tap = nullptr);

// Total share mass sitting at or below the solver's clamp floor (diagnostic).
double clamped_share_mass(const Mat& w);

} // namespace fedsched
