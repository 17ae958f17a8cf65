#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsched/channel.hpp"
#include "fedsched/model.hpp"
#include "fedsched/scheduler.hpp"

namespace fedsched {

// Everything one experiment needs: system parameters (defaults are the
// published table values), solver hyperparameters, and sweep bookkeeping.
struct ExperimentConfig {
  int n_users = 10;            // N
  double slot_s = 5e-3;        // tau
  int horizon = 100;           // T
  int block_slots = 10;        // t_s
  double demand_bits = 1.6e6;  // C_m
  double tx_power_w = 0.1;     // fixed transmit power
  double speed_kmh = 10.0;     // v
  double bandwidth_hz = 9e6;   // B
  double noise_w_hz = 3.9810717055349565e-21; // N0, -174 dBm/Hz
  double fixed_rate_bps = 80e6;// R
  double energy_budget_j = 40e-3; // E_m
  double carrier_hz = 900e6;   // f_c
  double pathloss_exp = 3.0;
  double pathloss_ref = 0.01;  // mean gain at 1 m
  double cell_radius_m = 1000.0;
  // Control mode: distance-only gains, no fading, no motion. Planning and
  // execution then see identical channels, so violations must be zero.
  bool deterministic_channel = false;

  FedHyper hyper;

  std::string problem = "p1";    // p1 | p2 | p3
  std::string sweep_parameter;   // table key; empty means a single point
  std::vector<double> sweep_values;
  int realizations = 100;        // traces averaged into the planning gains
  int runs = 100;                // independent simulation runs per point
  std::uint64_t seed = 1;
  RoundingMode rounding = RoundingMode::kSimple; // solve subcommand only
  bool reoptimize = false;                       // solve subcommand only
  int rounding_draws = 5;

  void validate() const;
  PipelineOptions pipeline_options() const;
  MobilityConfig mobility() const;
};

// Small profile used by tests and the acceptance gate: N=4, T=16, lighter
// demand, 20 realizations, 50 runs. The struct defaults above are the full
// published scale.
ExperimentConfig desk_config();

// Flat JSON round trip. Keys mirror the table names (N, tau_s, T, t_s,
// C_bits, P_w, v_kmh, B_hz, N0_w_hz, R_bps, E_j, f_c_hz, alpha, L0, cell_m,
// beta, rho, s_bar, eps1, eps2, q, mu0, ...). Power-like keys are also
// accepted with a _dbm suffix (P_dbm, N0_dbm_hz) and converted on load.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

// FNV-1a over the canonical serialization; the replay key carried by every
// result row.
std::string config_hash(const ExperimentConfig& cfg);

// Applies one swept value by its JSON key. Unknown keys throw.
void apply_parameter(ExperimentConfig& cfg, const std::string& key, double value);

struct ResultRow {
  int schema = 1;
  std::string experiment;  // set1 | set2 | set3
  std::string hash;        // config hash with the swept value applied
  std::uint64_t seed = 0;  // run seed; root seed on aggregate rows
  std::string parameter;   // swept key, "-" when none
  double value = 0;        // swept value, 0 when none
  std::string method;      // simple | smart | simple+reopt | smart+reopt | oracle
  std::string metric;
  double metric_value = 0;
  double wall_s = 0;
};

void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows);

// Channel plumbing. Planning gains are the element-wise mean over
// cfg.realizations fresh traces; execution gains are one fresh trace. In
// deterministic mode both collapse to the same distance-only matrix.
Mat planning_gains(const ExperimentConfig& cfg, std::uint64_t trace_seed);
Mat execution_gains(const ExperimentConfig& cfg, std::uint64_t trace_seed, int realization);

// Instance from a gain matrix, shaped by cfg.problem. Fixed-rate instances
// derive per-slot powers from the gains; bandwidth instances derive the slot
// budget from the energy budget at fixed power.
ProblemInstance make_instance(const ExperimentConfig& cfg, const Mat& gains);

// Experiment drivers. Rows come back in deterministic (sweep point, run,
// method) order regardless of the worker count; aggregate rows (mean over
// runs) follow each sweep point's block.
std::vector<ResultRow> run_set1(const ExperimentConfig& cfg);
std::vector<ResultRow> run_set2(const ExperimentConfig& cfg);
std::vector<ResultRow> run_set3(const ExperimentConfig& cfg);

// Worker pool size: FEDSCHED_WORKERS when set, hardware concurrency otherwise.
int worker_count();

} // namespace fedsched
