#include "fedsched/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "fedsched/adapters.hpp"
#include "fedsched/oracle.hpp"
#include "fedsched/rng.hpp"

namespace fedsched {

namespace {

using nlohmann::json;

double dbm_to_watt(double dbm) { return std::pow(10.0, dbm / 10.0) * 1e-3; }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct MethodSpec {
  const char* name;
  RoundingMode rounding;
  bool reoptimize;
};

// The figure grid: both roundings, each with and without re-optimization
// (the slot-assignment problem has no share stage to re-optimize). Timing
// runs collapse the rounding axis since both cost the same.
std::vector<MethodSpec> methods_for(const std::string& problem, bool timing_only) {
  std::vector<MethodSpec> out{{"simple", RoundingMode::kSimple, false}};
  if (!timing_only) out.push_back({"smart", RoundingMode::kSmart, false});
  if (problem != "p3") {
    out.push_back({"simple+reopt", RoundingMode::kSimple, true});
    if (!timing_only) out.push_back({"smart+reopt", RoundingMode::kSmart, true});
  }
  return out;
}

Mat deterministic_gains(const ExperimentConfig& cfg) {
  const MobilityConfig mob = cfg.mobility();
  Mat g(cfg.n_users, cfg.horizon);
  for (int m = 0; m < cfg.n_users; ++m) {
    const double d = cfg.cell_radius_m * (m + 1) / (cfg.n_users + 1.0);
    g.row(m).setConstant(path_loss(d, mob));
  }
  return g;
}

} // namespace

void ExperimentConfig::validate() const {
  if (n_users <= 0 || horizon <= 0)
    throw std::invalid_argument("user count and horizon must be positive");
  if (slot_s <= 0 || bandwidth_hz <= 0 || noise_w_hz <= 0)
    throw std::invalid_argument("slot length, bandwidth and noise must be positive");
  if (demand_bits < 0 || tx_power_w <= 0 || energy_budget_j <= 0)
    throw std::invalid_argument("demand must be nonnegative; power and energy positive");
  if (fixed_rate_bps <= 0 && problem == "p3")
    throw std::invalid_argument("the slot-assignment problem needs a positive fixed rate");
  if (speed_kmh < 0 || carrier_hz <= 0 || pathloss_ref <= 0 || cell_radius_m <= 0)
    throw std::invalid_argument("mobility parameters out of range");
  if (problem != "p1" && problem != "p2" && problem != "p3")
    throw std::invalid_argument("problem must be one of p1, p2, p3");
  if (problem == "p2" && (block_slots <= 0 || horizon % block_slots != 0))
    throw std::invalid_argument("block length must divide the horizon");
  if (realizations <= 0 || runs <= 0 || rounding_draws <= 0)
    throw std::invalid_argument("realizations, runs and rounding draws must be positive");
  if (!sweep_parameter.empty() && sweep_values.empty())
    throw std::invalid_argument("sweep parameter named but no values given");
  hyper.validate();
}

PipelineOptions ExperimentConfig::pipeline_options() const {
  PipelineOptions opt;
  opt.hyper = hyper;
  opt.rounding = rounding;
  opt.reoptimize = reoptimize;
  opt.rounding_draws = rounding_draws;
  opt.horizon_cap = horizon;
  opt.seed = seed;
  return opt;
}

MobilityConfig ExperimentConfig::mobility() const {
  MobilityConfig m;
  m.cell_radius_m = cell_radius_m;
  m.speed_mps = speed_kmh / 3.6;
  m.carrier_hz = carrier_hz;
  m.pathloss_ref = pathloss_ref;
  m.pathloss_exp = pathloss_exp;
  return m;
}

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.n_users = 4;
  cfg.horizon = 16;
  cfg.block_slots = 4;
  cfg.demand_bits = 4e5;
  cfg.realizations = 20;
  cfg.runs = 50;
  return cfg;
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  static const std::set<std::string> known = {
      "profile", "N", "tau_s", "T", "t_s", "C_bits", "P_w", "P_dbm", "v_kmh",
      "B_hz", "N0_w_hz", "N0_dbm_hz", "R_bps", "E_j", "f_c_hz", "alpha", "L0",
      "cell_m", "deterministic_channel", "beta", "rho", "s_bar", "eps1", "eps2",
      "q", "mu0", "max_outer", "max_inner", "max_total_inner", "subsolver_iters",
      "problem", "sweep_parameter", "sweep_values", "realizations", "runs",
      "seed", "rounding", "reoptimize", "rounding_draws"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw std::invalid_argument("unknown config key: " + item.key());
  ExperimentConfig cfg;
  if (j.contains("profile")) {
    const std::string p = j.at("profile").get<std::string>();
    if (p == "desk")
      cfg = desk_config();
    else if (p != "paper")
      throw std::invalid_argument("unknown profile: " + p);
  }

  auto num = [&](const char* key, double& slot) {
    if (j.contains(key)) slot = j.at(key).get<double>();
  };
  auto integer = [&](const char* key, int& slot) {
    if (j.contains(key)) slot = j.at(key).get<int>();
  };

  integer("N", cfg.n_users);
  num("tau_s", cfg.slot_s);
  integer("T", cfg.horizon);
  integer("t_s", cfg.block_slots);
  num("C_bits", cfg.demand_bits);
  if (j.contains("P_w") && j.contains("P_dbm"))
    throw std::invalid_argument("give the transmit power in one unit only");
  num("P_w", cfg.tx_power_w);
  if (j.contains("P_dbm")) cfg.tx_power_w = dbm_to_watt(j.at("P_dbm").get<double>());
  num("v_kmh", cfg.speed_kmh);
  num("B_hz", cfg.bandwidth_hz);
  if (j.contains("N0_w_hz") && j.contains("N0_dbm_hz"))
    throw std::invalid_argument("give the noise density in one unit only");
  num("N0_w_hz", cfg.noise_w_hz);
  if (j.contains("N0_dbm_hz")) cfg.noise_w_hz = dbm_to_watt(j.at("N0_dbm_hz").get<double>());
  num("R_bps", cfg.fixed_rate_bps);
  num("E_j", cfg.energy_budget_j);
  num("f_c_hz", cfg.carrier_hz);
  num("alpha", cfg.pathloss_exp);
  num("L0", cfg.pathloss_ref);
  num("cell_m", cfg.cell_radius_m);
  if (j.contains("deterministic_channel"))
    cfg.deterministic_channel = j.at("deterministic_channel").get<bool>();

  num("beta", cfg.hyper.penalty_beta);
  num("rho", cfg.hyper.client_rho);
  num("s_bar", cfg.hyper.prox_sbar);
  num("eps1", cfg.hyper.tol_step);
  num("eps2", cfg.hyper.tol_multiplier);
  num("q", cfg.hyper.inner_decay);
  num("mu0", cfg.hyper.mu_init);
  integer("max_outer", cfg.hyper.max_outer);
  integer("max_inner", cfg.hyper.max_inner);
  integer("max_total_inner", cfg.hyper.max_total_inner);
  integer("subsolver_iters", cfg.hyper.subsolver_iters);

  if (j.contains("problem")) cfg.problem = j.at("problem").get<std::string>();
  if (j.contains("sweep_parameter"))
    cfg.sweep_parameter = j.at("sweep_parameter").get<std::string>();
  if (j.contains("sweep_values"))
    cfg.sweep_values = j.at("sweep_values").get<std::vector<double>>();
  integer("realizations", cfg.realizations);
  integer("runs", cfg.runs);
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("rounding")) {
    const std::string r = j.at("rounding").get<std::string>();
    if (r == "simple")
      cfg.rounding = RoundingMode::kSimple;
    else if (r == "smart")
      cfg.rounding = RoundingMode::kSmart;
    else
      throw std::invalid_argument("rounding must be simple or smart");
  }
  if (j.contains("reoptimize")) cfg.reoptimize = j.at("reoptimize").get<bool>();
  integer("rounding_draws", cfg.rounding_draws);

  cfg.validate();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["N"] = cfg.n_users;
  j["tau_s"] = cfg.slot_s;
  j["T"] = cfg.horizon;
  j["t_s"] = cfg.block_slots;
  j["C_bits"] = cfg.demand_bits;
  j["P_w"] = cfg.tx_power_w;
  j["v_kmh"] = cfg.speed_kmh;
  j["B_hz"] = cfg.bandwidth_hz;
  j["N0_w_hz"] = cfg.noise_w_hz;
  j["R_bps"] = cfg.fixed_rate_bps;
  j["E_j"] = cfg.energy_budget_j;
  j["f_c_hz"] = cfg.carrier_hz;
  j["alpha"] = cfg.pathloss_exp;
  j["L0"] = cfg.pathloss_ref;
  j["cell_m"] = cfg.cell_radius_m;
  j["deterministic_channel"] = cfg.deterministic_channel;
  j["beta"] = cfg.hyper.penalty_beta;
  j["rho"] = cfg.hyper.client_rho;
  j["s_bar"] = cfg.hyper.prox_sbar;
  j["eps1"] = cfg.hyper.tol_step;
  j["eps2"] = cfg.hyper.tol_multiplier;
  j["q"] = cfg.hyper.inner_decay;
  j["mu0"] = cfg.hyper.mu_init;
  j["max_outer"] = cfg.hyper.max_outer;
  j["max_inner"] = cfg.hyper.max_inner;
  j["max_total_inner"] = cfg.hyper.max_total_inner;
  j["subsolver_iters"] = cfg.hyper.subsolver_iters;
  j["problem"] = cfg.problem;
  j["sweep_parameter"] = cfg.sweep_parameter;
  j["sweep_values"] = cfg.sweep_values;
  j["realizations"] = cfg.realizations;
  j["runs"] = cfg.runs;
  j["seed"] = cfg.seed;
  j["rounding"] = cfg.rounding == RoundingMode::kSmart ? "smart" : "simple";
  j["reoptimize"] = cfg.reoptimize;
  j["rounding_draws"] = cfg.rounding_draws;
  return j.dump(2);
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string canon = config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_parameter(ExperimentConfig& cfg, const std::string& key, double value) {
  if (key == "N")
    cfg.n_users = static_cast<int>(value);
  else if (key == "T")
    cfg.horizon = static_cast<int>(value);
  else if (key == "t_s")
    cfg.block_slots = static_cast<int>(value);
  else if (key == "tau_s")
    cfg.slot_s = value;
  else if (key == "C_bits")
    cfg.demand_bits = value;
  else if (key == "P_w")
    cfg.tx_power_w = value;
  else if (key == "v_kmh")
    cfg.speed_kmh = value;
  else if (key == "B_hz")
    cfg.bandwidth_hz = value;
  else if (key == "N0_w_hz")
    cfg.noise_w_hz = value;
  else if (key == "R_bps")
    cfg.fixed_rate_bps = value;
  else if (key == "E_j")
    cfg.energy_budget_j = value;
  else if (key == "alpha")
    cfg.pathloss_exp = value;
  else if (key == "L0")
    cfg.pathloss_ref = value;
  else if (key == "cell_m")
    cfg.cell_radius_m = value;
  else if (key == "eps1")
    cfg.hyper.tol_step = value;
  else if (key == "eps2")
    cfg.hyper.tol_multiplier = value;
  else if (key == "beta")
    cfg.hyper.penalty_beta = value;
  else if (key == "rho")
    cfg.hyper.client_rho = value;
  else
    throw std::invalid_argument("unknown sweep parameter: " + key);
}

void write_rows_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "schema,experiment,config_hash,seed,parameter,value,method,metric,metric_value,wall_s\n";
  for (const auto& r : rows)
    f << r.schema << ',' << r.experiment << ',' << r.hash << ',' << r.seed << ','
      << r.parameter << ',' << format_double(r.value) << ',' << r.method << ',' << r.metric
      << ',' << format_double(r.metric_value) << ',' << format_double(r.wall_s) << '\n';
}

Mat planning_gains(const ExperimentConfig& cfg, std::uint64_t trace_seed) {
  if (cfg.deterministic_channel) return deterministic_gains(cfg);
  CounterRng root(trace_seed);
  std::vector<ChannelTrace> traces;
  traces.reserve(cfg.realizations);
  for (int i = 0; i < cfg.realizations; ++i)
    traces.push_back(generate_trace(cfg.mobility(), cfg.n_users, cfg.horizon, cfg.slot_s,
                                    root.stream(11, i).key()));
  return average_traces(traces).gains;
}

Mat execution_gains(const ExperimentConfig& cfg, std::uint64_t trace_seed, int realization) {
  if (cfg.deterministic_channel) return deterministic_gains(cfg);
  return generate_trace(cfg.mobility(), cfg.n_users, cfg.horizon, cfg.slot_s,
                        CounterRng(trace_seed).stream(13, realization).key())
      .gains;
}

ProblemInstance make_instance(const ExperimentConfig& cfg, const Mat& gains) {
  if (gains.rows() != cfg.n_users || gains.cols() != cfg.horizon)
    throw std::invalid_argument("gain matrix does not match the configured shape");

  ProblemInstance inst;
  inst.params.bandwidth_hz = cfg.bandwidth_hz;
  inst.params.noise_w_hz = cfg.noise_w_hz;
  inst.params.slot_s = cfg.slot_s;
  inst.params.horizon = cfg.horizon;

  if (cfg.problem == "p3") {
    inst.variant = Variant::kFixedRate;
    inst.params.fixed_rate_bps = cfg.fixed_rate_bps;
    for (int m = 0; m < cfg.n_users; ++m) {
      UserFixedRateData u;
      u.demand_bits = cfg.demand_bits;
      u.energy_budget_j = cfg.energy_budget_j;
      u.slot_power_w.resize(cfg.horizon);
      for (int t = 0; t < cfg.horizon; ++t)
        u.slot_power_w(t) = required_power_w(gains(m, t), inst.params);
      inst.fr_users.push_back(std::move(u));
    }
  } else {
    inst.variant = cfg.problem == "p2" ? Variant::kBlockShare : Variant::kBandwidthShare;
    if (cfg.problem == "p2") inst.params.block_slots = cfg.block_slots;
    for (int m = 0; m < cfg.n_users; ++m) {
      UserBandwidthData u;
      u.demand_bits = cfg.demand_bits;
      u.tx_power_w = cfg.tx_power_w;
      u.energy_slots = energy_slot_cap(cfg.energy_budget_j, cfg.tx_power_w, cfg.slot_s);
      u.gains = gains.row(m).transpose();
      inst.bw_users.push_back(std::move(u));
    }
  }
  inst.validate();
  return inst;
}

int worker_count() {
  if (const char* env = std::getenv("FEDSCHED_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace {

// Index-sharded parallel loop. fn must not throw (tasks record their own
// failures); results land in preallocated slots so assembly order never
// depends on scheduling.
void parallel_for_index(int n_tasks, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n_tasks);
  if (workers <= 1) {
    for (int i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n_tasks;) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct SweepPoint {
  std::string parameter = "-";
  double value = 0;
  ExperimentConfig cfg;
  std::string hash;
};

std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
  std::vector<SweepPoint> pts;
  if (cfg.sweep_parameter.empty()) {
    pts.push_back({"-", 0, cfg, config_hash(cfg)});
    return pts;
  }
  for (double v : cfg.sweep_values) {
    SweepPoint pt;
    pt.parameter = cfg.sweep_parameter;
    pt.value = v;
    pt.cfg = cfg;
    apply_parameter(pt.cfg, cfg.sweep_parameter, v);
    pt.cfg.validate();
    pt.hash = config_hash(pt.cfg);
    pts.push_back(std::move(pt));
  }
  return pts;
}

struct RunOutput {
  std::vector<ResultRow> rows;
  bool failed = false;
  std::string error;
};

std::uint64_t run_seed_for(const ExperimentConfig& cfg, int point, int run) {
  return CounterRng(cfg.seed).stream(70001 + point, run).key();
}

// Per-point assembly: per-run rows in run order, then mean rows per
// (method, metric) in first-appearance order. A failed run voids the whole
// point, which collapses to a single "aborted" marker row.
void assemble_point(const std::string& experiment, const ExperimentConfig& root,
                    const SweepPoint& pt, const std::vector<RunOutput>& outputs,
                    std::vector<ResultRow>& rows) {
  for (const auto& out : outputs)
    if (out.failed) {
      std::cerr << "[" << experiment << "] sweep point " << pt.parameter << "="
                << format_double(pt.value) << " aborted: " << out.error << "\n";
      ResultRow r;
      r.experiment = experiment;
      r.hash = pt.hash;
      r.seed = root.seed;
      r.parameter = pt.parameter;
      r.value = pt.value;
      r.method = "-";
      r.metric = "aborted";
      r.metric_value = 1;
      rows.push_back(std::move(r));
      return;
    }

  struct Agg {
    std::string method, metric;
    double sum = 0, wall = 0;
    int count = 0;
  };
  std::vector<Agg> aggs;
  for (const auto& out : outputs)
    for (const auto& r : out.rows) {
      rows.push_back(r);
      auto it = std::find_if(aggs.begin(), aggs.end(), [&](const Agg& a) {
        return a.method == r.method && a.metric == r.metric;
      });
      if (it == aggs.end()) {
        aggs.push_back({r.method, r.metric, 0, 0, 0});
        it = std::prev(aggs.end());
      }
      it->sum += r.metric_value;
      it->wall += r.wall_s;
      ++it->count;
    }
  for (const auto& a : aggs) {
    ResultRow r;
    r.experiment = experiment;
    r.hash = pt.hash;
    r.seed = root.seed;
    r.parameter = pt.parameter;
    r.value = pt.value;
    r.method = a.method;
    r.metric = "mean_" + a.metric;
    r.metric_value = a.sum / a.count;
    r.wall_s = a.wall / a.count;
    rows.push_back(std::move(r));
  }
}

ResultRow base_row(const std::string& experiment, const SweepPoint& pt, std::uint64_t seed,
                   const char* method) {
  ResultRow r;
  r.experiment = experiment;
  r.hash = pt.hash;
  r.seed = seed;
  r.parameter = pt.parameter;
  r.value = pt.value;
  r.method = method;
  return r;
}

// Highest per-block bandwidth boost; the band must be provisioned for the
// worst block of the plan.
double block_boost_hz(const BlockScheduleResult& br, double base_hz) {
  double boost = 0;
  for (const auto& b : br.blocks)
    if (b.schedule.boosted_bandwidth_hz > 0)
      boost = std::max(boost, b.schedule.boosted_bandwidth_hz - base_hz);
  return boost;
}

RunOutput set1_run(const SweepPoint& pt, std::uint64_t run_seed) {
  RunOutput out;
  const ExperimentConfig& cfg = pt.cfg;
  const Mat plan = planning_gains(cfg, run_seed);
  const ProblemInstance inst = make_instance(cfg, plan);

  for (const MethodSpec& ms : methods_for(cfg.problem, false)) {
    PipelineOptions opt = cfg.pipeline_options();
    opt.rounding = ms.rounding;
    opt.reoptimize = ms.reoptimize;
    opt.seed = run_seed;

    auto push = [&](const char* metric, double v, double wall) {
      ResultRow r = base_row("set1", pt, run_seed, ms.name);
      r.metric = metric;
      r.metric_value = v;
      r.wall_s = wall;
      out.rows.push_back(std::move(r));
    };

    if (cfg.problem == "p2") {
      BlockScheduleResult br = block_schedule(inst, opt);
      if (!br.complete) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + br.failure;
        return out;
      }
      push("bandwidth_boost_hz", block_boost_hz(br, cfg.bandwidth_hz), br.total_seconds);
      push("blocks", static_cast<double>(br.blocks.size()), br.total_seconds);
    } else if (cfg.problem == "p3") {
      ScheduleResult res = feasible_slot_schedule(inst, opt);
      if (!res.feasible) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + res.failure;
        return out;
      }
      push("energy_boost_j", res.boost_energy_total_j, res.times.total_s);
      push("horizon_slots", res.horizon_used, res.times.total_s);
    } else {
      ScheduleResult res = fair_point_schedule(inst, opt);
      if (!res.feasible) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + res.failure;
        return out;
      }
      const double boost =
          res.boost_bandwidth_hz > 0 ? res.boost_bandwidth_hz - cfg.bandwidth_hz : 0.0;
      push("bandwidth_boost_hz", boost, res.times.total_s);
      push("horizon_slots", res.horizon_used, res.times.total_s);
      push("gamma", res.gamma_final, res.times.total_s);
    }
  }
  return out;
}

// Served bits of one user under share row w_row and assignment row x_row on
// realized gains, at the given bandwidth.
double served_bits(const Vec& x_row, const Vec& w_row, const Vec& gains_row, double power_w,
                   double bandwidth_hz, const SystemParams& base) {
  SystemParams p = base;
  p.bandwidth_hz = bandwidth_hz;
  double bits = 0;
  for (int t = 0; t < x_row.size(); ++t)
    if (x_row(t) > 0.5 && w_row(t) > 0)
      bits += p.slot_s * rate_bps(w_row(t), gains_row(t), power_w, p);
  return bits;
}

// Mean demand-shortfall percentage of a bandwidth-sharing plan replayed on
// fresh gains.
double share_plan_violation_pct(const ExperimentConfig& cfg, const Schedule& sched,
                                const Mat& fresh) {
  SystemParams base;
  base.bandwidth_hz = cfg.bandwidth_hz;
  base.noise_w_hz = cfg.noise_w_hz;
  base.slot_s = cfg.slot_s;
  base.horizon = sched.x.cols();
  const double band =
      sched.boosted_bandwidth_hz > 0 ? sched.boosted_bandwidth_hz : cfg.bandwidth_hz;
  if (cfg.demand_bits <= 0) return 0.0;
  double total = 0;
  for (int m = 0; m < sched.x.rows(); ++m) {
    const double served =
        served_bits(sched.x.row(m).transpose(), sched.w.row(m).transpose(),
                    fresh.row(m).head(sched.x.cols()).transpose(), cfg.tx_power_w, band, base);
    total += std::max(0.0, (cfg.demand_bits - served) / cfg.demand_bits);
  }
  return 100.0 * total / sched.x.rows();
}

// Block plans serve residual targets. Targets are replayed from the planning
// gains (the scheduler's own bookkeeping), then scored on the fresh gains.
double block_plan_violation_pct(const ExperimentConfig& cfg, const BlockScheduleResult& br,
                                const Mat& plan, const Mat& fresh) {
  SystemParams base;
  base.bandwidth_hz = cfg.bandwidth_hz;
  base.noise_w_hz = cfg.noise_w_hz;
  base.slot_s = cfg.slot_s;
  base.horizon = cfg.block_slots;

  const int n = cfg.n_users;
  Vec residual = Vec::Constant(n, cfg.demand_bits);
  double total = 0;
  int terms = 0;
  int offset = 0;
  for (std::size_t b = 0; b < br.blocks.size(); ++b) {
    const Schedule& sched = br.blocks[b].schedule;
    const int ts = sched.x.cols();
    const double band =
        sched.boosted_bandwidth_hz > 0 ? sched.boosted_bandwidth_hz : cfg.bandwidth_hz;
    for (int m = 0; m < n; ++m) {
      const double target = br.planned_fractions[b] * residual(m);
      const double on_plan =
          served_bits(sched.x.row(m).transpose(), sched.w.row(m).transpose(),
                      plan.row(m).segment(offset, ts).transpose(), cfg.tx_power_w, band, base);
      if (target > 1e-9) {
        const double on_fresh =
            served_bits(sched.x.row(m).transpose(), sched.w.row(m).transpose(),
                        fresh.row(m).segment(offset, ts).transpose(), cfg.tx_power_w, band, base);
        total += std::max(0.0, (target - on_fresh) / target);
        ++terms;
      }
      residual(m) = std::max(0.0, residual(m) - on_plan);
    }
    offset += ts;
  }
  return terms > 0 ? 100.0 * total / terms : 0.0;
}

// Energy overdraft percentage of a slot plan whose power control follows the
// realized channel.
double slot_plan_violation_pct(const ExperimentConfig& cfg, const Mat& x, const Vec& budgets,
                               const Mat& fresh) {
  SystemParams p;
  p.bandwidth_hz = cfg.bandwidth_hz;
  p.noise_w_hz = cfg.noise_w_hz;
  p.slot_s = cfg.slot_s;
  p.horizon = x.cols();
  p.fixed_rate_bps = cfg.fixed_rate_bps;
  double total = 0;
  for (int m = 0; m < x.rows(); ++m) {
    double spend = 0;
    for (int t = 0; t < x.cols(); ++t)
      if (x(m, t) > 0.5) spend += p.slot_s * required_power_w(fresh(m, t), p);
    total += std::max(0.0, (spend - budgets(m)) / budgets(m));
  }
  return 100.0 * total / x.rows();
}

RunOutput set2_run(const SweepPoint& pt, std::uint64_t run_seed) {
  RunOutput out;
  const ExperimentConfig& cfg = pt.cfg;
  const Mat plan = planning_gains(cfg, run_seed);
  const ProblemInstance inst = make_instance(cfg, plan);

  std::vector<Mat> fresh;
  fresh.reserve(cfg.realizations);
  for (int j = 0; j < cfg.realizations; ++j)
    fresh.push_back(execution_gains(cfg, run_seed, j));

  for (const MethodSpec& ms : methods_for(cfg.problem, false)) {
    PipelineOptions opt = cfg.pipeline_options();
    opt.rounding = ms.rounding;
    opt.reoptimize = ms.reoptimize;
    opt.seed = run_seed;

    double viol = 0;
    double wall = 0;
    if (cfg.problem == "p2") {
      BlockScheduleResult br = block_schedule(inst, opt);
      if (!br.complete) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + br.failure;
        return out;
      }
      for (const Mat& g : fresh) viol += block_plan_violation_pct(cfg, br, plan, g);
      wall = br.total_seconds;
    } else if (cfg.problem == "p3") {
      ScheduleResult res = feasible_slot_schedule(inst, opt);
      if (!res.feasible) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + res.failure;
        return out;
      }
      Vec budgets = res.schedule.boosted_energy_j;
      if (budgets.size() == 0) budgets = Vec::Constant(cfg.n_users, cfg.energy_budget_j);
      for (const Mat& g : fresh)
        viol += slot_plan_violation_pct(cfg, res.schedule.x, budgets,
                                        g.leftCols(res.schedule.x.cols()));
      wall = res.times.total_s;
    } else {
      ScheduleResult res = fair_point_schedule(inst, opt);
      if (!res.feasible) {
        out.failed = true;
        out.error = ms.name + std::string(": ") + res.failure;
        return out;
      }
      for (const Mat& g : fresh) viol += share_plan_violation_pct(cfg, res.schedule, g);
      wall = res.times.total_s;
    }

    ResultRow r = base_row("set2", pt, run_seed, ms.name);
    r.metric = "violation_pct";
    r.metric_value = viol / cfg.realizations;
    r.wall_s = wall;
    out.rows.push_back(std::move(r));
  }

  // Reference plan from the exhaustive solver, when it is willing to run at
  // this size. Evaluated on the same fresh gains.
  if (cfg.problem == "p1") {
    OracleResult orc = min_horizon_shared_band(inst, cfg.horizon);
    if (!orc.refused && orc.feasible) {
      Schedule sched;
      sched.x = orc.x;
      sched.w = orc.w;
      sched.slots_used = orc.t_star;
      double viol = 0;
      for (const Mat& g : fresh) viol += share_plan_violation_pct(cfg, sched, g);
      ResultRow r = base_row("set2", pt, run_seed, "oracle");
      r.metric = "violation_pct";
      r.metric_value = viol / cfg.realizations;
      r.wall_s = orc.seconds;
      out.rows.push_back(std::move(r));
    }
  } else if (cfg.problem == "p3") {
    OracleResult orc = min_horizon_fixed_rate(inst, cfg.horizon);
    if (!orc.refused && orc.feasible) {
      const Vec budgets = Vec::Constant(cfg.n_users, cfg.energy_budget_j);
      double viol = 0;
      for (const Mat& g : fresh)
        viol += slot_plan_violation_pct(cfg, orc.x, budgets, g.leftCols(orc.x.cols()));
      ResultRow r = base_row("set2", pt, run_seed, "oracle");
      r.metric = "violation_pct";
      r.metric_value = viol / cfg.realizations;
      r.wall_s = orc.seconds;
      out.rows.push_back(std::move(r));
    }
  }
  return out;
}

constexpr std::pair<double, double> kToleranceGrid[] = {
    {0.5, 0.05}, {1e-2, 1e-2}, {1e-3, 1e-3}, {1e-4, 1e-4}};

RunOutput set3_run(const SweepPoint& pt, std::uint64_t run_seed) {
  RunOutput out;
  const ExperimentConfig& cfg = pt.cfg;
  const Mat plan = planning_gains(cfg, run_seed);
  const ProblemInstance inst = make_instance(cfg, plan);

  for (const MethodSpec& ms : methods_for(cfg.problem, true)) {
    PipelineOptions opt = cfg.pipeline_options();
    opt.rounding = ms.rounding;
    opt.reoptimize = ms.reoptimize;
    opt.seed = run_seed;

    StageTimes times;
    double budget_s = 0, spent_vs_budget_s = 0;
    bool ok = false;
    if (cfg.problem == "p2") {
      BlockScheduleResult br = block_schedule(inst, opt);
      ok = br.complete;
      double block_max = 0;
      for (const auto& b : br.blocks) {
        times.solve_s += b.times.solve_s;
        times.rounding_s += b.times.rounding_s;
        times.reopt_s += b.times.reopt_s;
        times.boost_s += b.times.boost_s;
        block_max = std::max(block_max, b.times.total_s);
      }
      times.total_s = br.total_seconds;
      budget_s = cfg.block_slots * cfg.slot_s;
      spent_vs_budget_s = block_max;
    } else {
      ScheduleResult res = cfg.problem == "p3" ? feasible_slot_schedule(inst, opt)
                                               : fair_point_schedule(inst, opt);
      ok = res.feasible;
      times = res.times;
      budget_s = cfg.horizon * cfg.slot_s;
      spent_vs_budget_s = res.times.total_s;
    }
    if (!ok) {
      out.failed = true;
      out.error = ms.name + std::string(": pipeline failed under tightened tolerances");
      return out;
    }

    auto push = [&](const char* metric, double v) {
      ResultRow r = base_row("set3", pt, run_seed, ms.name);
      r.metric = metric;
      r.metric_value = v;
      r.wall_s = times.total_s;
      out.rows.push_back(std::move(r));
    };
    push("time_total_s", times.total_s);
    push("time_solve_s", times.solve_s);
    push("time_rounding_s", times.rounding_s);
    push("time_reopt_s", times.reopt_s);
    push("time_boost_s", times.boost_s);
    if (cfg.problem == "p2") push("block_time_max_s", spent_vs_budget_s);
    push("within_budget", spent_vs_budget_s <= budget_s ? 1.0 : 0.0);
  }
  return out;
}

std::vector<ResultRow> drive(const ExperimentConfig& cfg, const std::string& experiment,
                             const std::vector<SweepPoint>& points,
                             RunOutput (*run_fn)(const SweepPoint&, std::uint64_t)) {
  const int n_points = static_cast<int>(points.size());
  const int runs = cfg.runs;
  std::vector<RunOutput> outputs(static_cast<std::size_t>(n_points) * runs);

  parallel_for_index(n_points * runs, [&](int idx) {
    const int p = idx / runs;
    const int r = idx % runs;
    const std::uint64_t run_seed = run_seed_for(cfg, p, r);
    try {
      outputs[idx] = run_fn(points[p], run_seed);
    } catch (const std::exception& e) {
      outputs[idx].failed = true;
      outputs[idx].error = e.what();
    }
  });

  std::vector<ResultRow> rows;
  for (int p = 0; p < n_points; ++p) {
    std::vector<RunOutput> point_outputs(outputs.begin() + static_cast<std::size_t>(p) * runs,
                                         outputs.begin() + static_cast<std::size_t>(p + 1) * runs);
    assemble_point(experiment, cfg, points[p], point_outputs, rows);
  }
  return rows;
}

} // namespace

std::vector<ResultRow> run_set1(const ExperimentConfig& cfg) {
  cfg.validate();
  return drive(cfg, "set1", sweep_points(cfg), &set1_run);
}

std::vector<ResultRow> run_set2(const ExperimentConfig& cfg) {
  cfg.validate();
  return drive(cfg, "set2", sweep_points(cfg), &set2_run);
}

std::vector<ResultRow> run_set3(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!cfg.sweep_parameter.empty())
    throw std::invalid_argument("the runtime experiment sweeps its own tolerance grid");
  std::vector<SweepPoint> points;
  for (const auto& [eps1, eps2] : kToleranceGrid) {
    SweepPoint pt;
    pt.parameter = "eps1";
    pt.value = eps1;
    pt.cfg = cfg;
    pt.cfg.hyper.tol_step = eps1;
    pt.cfg.hyper.tol_multiplier = eps2;
    pt.hash = config_hash(pt.cfg);
    points.push_back(std::move(pt));
  }
  return drive(cfg, "set3", points, &set3_run);
}

} // namespace fedsched
