#pragma once

#include <string>
#include <vector>

#include "fedsched/types.hpp"

namespace fedsched {

// Relative-violation threshold used when none is given explicitly.
inline constexpr double kDefaultViolationTol = 1e-3;

struct SystemParams {
  double bandwidth_hz = 9e6;   // shared uplink bandwidth B
  double noise_w_hz = 3.9810717055349565e-21; // N0 (one-sided PSD, W/Hz)
  double slot_s = 5e-3;        // slot length tau
  int horizon = 100;           // number of slots T in the planning window
  int block_slots = 0;         // per-block horizon t_s (block scheduling only)
  double fixed_rate_bps = 0.0; // fixed transmission rate R (fixed-power mode)

  void validate() const; // throws std::invalid_argument on nonsense
};

// Private payload of one user in the bandwidth-sharing problem.  Everything
// in here stays on the user's side of the message boundary.
struct UserBandwidthData {
  double demand_bits = 0.0;  // C_m
  double tx_power_w = 0.1;   // transmit power used when scheduled
  int energy_slots = 0;      // n_m, max number of active slots
  Vec gains;                 // per-slot link gain g_{m,t}, length horizon
};

// Private payload of one user in the fixed-rate slot-assignment problem.
struct UserFixedRateData {
  double demand_bits = 0.0;   // C_m
  double energy_budget_j = 0; // E_m
  Vec slot_power_w;           // power needed to hit the fixed rate in slot t
};

enum class Variant { kBandwidthShare, kBlockShare, kFixedRate };

struct ProblemInstance {
  Variant variant = Variant::kBandwidthShare;
  SystemParams params;
  std::vector<UserBandwidthData> bw_users;   // kBandwidthShare / kBlockShare
  std::vector<UserFixedRateData> fr_users;   // kFixedRate
  double gamma_fraction = 1.0;               // per-block service fraction

  int n_users() const {
    return variant == Variant::kFixedRate ? static_cast<int>(fr_users.size())
                                          : static_cast<int>(bw_users.size());
  }
  void validate() const;
};

struct Schedule {
  Mat x; // N x T slot assignment, entries in {0,1}
  Mat w; // N x T bandwidth shares (bandwidth-sharing variants), 0 x 0 otherwise
  double boosted_bandwidth_hz = 0.0; // > 0 when a bandwidth boost was applied
  Vec boosted_energy_j;              // per-user boosted budgets (fixed-rate), empty if none
  int slots_used = 0;                // horizon actually scheduled
};

struct ConstraintViolation {
  std::string family;  // "bandwidth", "demand", "energy", "coupling", "slot", "integrality"
  double relative = 0; // worst max(0, gap) / |rhs| over the family (denominator 1 if rhs == 0)
  double absolute = 0; // worst absolute gap
  int worst_index = -1; // user id for per-user families, slot id for per-slot ones
};

struct ViolationReport {
  std::vector<ConstraintViolation> entries;
  double tolerance = kDefaultViolationTol;
  bool satisfied = false;

  double max_relative() const;
  const ConstraintViolation* find(const std::string& family) const;
};

// Achievable uplink rate (bit/s) for share w of bandwidth B at link gain
// `gain` and transmit power `power_w`.  Continuous at w = 0 with value 0.
double rate_bps(double w, double gain, double power_w, const SystemParams& p);

// Power needed to sustain params.fixed_rate_bps over the full band at link
// gain `gain`.  Returns +inf for gain <= 0 (slot unreachable; callers must
// exclude such slots).
double required_power_w(double gain, const SystemParams& p);

// Minimum number of active slots to move `demand_bits` at the fixed rate.
int slots_needed(double demand_bits, const SystemParams& p);

// Largest number of active slots affordable with energy budget `energy_j` at
// per-slot power `power_w`.
int energy_slot_cap(double energy_j, double power_w, double slot_s);

// Checks a (possibly boosted) schedule against the instance constraints and
// reports per-family worst relative violations.  Dimensions must match the
// instance; mismatches throw std::invalid_argument.
ViolationReport eval_constraints(const ProblemInstance& inst, const Schedule& s,
                                 double tol = kDefaultViolationTol);

// Planning-window view of an instance: `horizon` slots starting at `offset`,
// with per-user traces sliced to match.
ProblemInstance window_instance(const ProblemInstance& inst, int offset, int horizon);

} // namespace fedsched
