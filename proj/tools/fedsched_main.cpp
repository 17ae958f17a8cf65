// Command-line front end: trace generation and inspection, single solves,
// reference solves, the three experiment drivers, and the message audit.
// Exit codes: 0 success, 1 usage, 2 runtime failure, 3 infeasible.

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedsched/channel.hpp"
#include "fedsched/harness.hpp"
#include "fedsched/messages.hpp"
#include "fedsched/oracle.hpp"
#include "fedsched/scheduler.hpp"

namespace {

using fedsched::ExperimentConfig;
using fedsched::Mat;
using nlohmann::json;

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Plain matrix CSV, one row per user, no header. Formatting is pinned so
// repeated runs with the same seed produce byte-identical files.
void write_matrix_csv(const std::string& path, const Mat& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (c) f << ',';
      f << fmt(m(r, c));
    }
    f << '\n';
  }
}

struct ConfigArgs {
  std::string path;
  bool desk = false;
  std::string problem;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  auto* cfg_opt = cmd->add_option("--config", args.path, "experiment config JSON");
  cmd->add_flag("--desk", args.desk, "small desk-scale profile instead of the full-scale defaults")
      ->excludes(cfg_opt);
  cmd->add_option("--problem", args.problem, "p1 | p2 | p3");
  cmd->add_option("--seed", args.seed, "root seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
  ExperimentConfig cfg;
  if (!args.path.empty())
    cfg = fedsched::load_config_file(args.path);
  else if (args.desk)
    cfg = fedsched::desk_config();
  if (!args.problem.empty()) cfg.problem = args.problem;
  if (args.seed_set) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

json times_json(const fedsched::StageTimes& t) {
  return {{"solve_s", t.solve_s},
          {"rounding_s", t.rounding_s},
          {"reopt_s", t.reopt_s},
          {"boost_s", t.boost_s},
          {"total_s", t.total_s}};
}

int run_trace(const std::string& action, const std::string& in_path, bool in_cache,
              const std::string& out_csv, const std::string& out_cache, int n, int t,
              std::uint64_t seed, double speed_kmh, double tau_s, fedsched::MobilityConfig mob) {
  if (action == "generate") {
    mob.speed_mps = speed_kmh / 3.6;
    const fedsched::ChannelTrace trace = fedsched::generate_trace(mob, n, t, tau_s, seed);
    if (out_csv.empty() && out_cache.empty())
      throw CLI::ValidationError("trace generate needs --out or --cache");
    if (!out_csv.empty()) fedsched::write_trace_csv(out_csv, trace);
    if (!out_cache.empty()) fedsched::write_trace_cache(out_cache, trace);
    return 0;
  }

  // inspect
  if (in_path.empty()) throw CLI::ValidationError("trace inspect needs --in");
  const fedsched::ChannelTrace trace =
      in_cache ? fedsched::read_trace_cache(in_path) : fedsched::read_trace_csv(in_path);
  const Mat& g = trace.gains;
  double lag1 = 0;
  int lag1_rows = 0;
  for (int m = 0; m < g.rows(); ++m) {
    if (g.cols() < 3) break;
    const auto a = g.row(m).head(g.cols() - 1);
    const auto b = g.row(m).tail(g.cols() - 1);
    const double ma = a.mean(), mb = b.mean();
    const double cov = ((a.array() - ma) * (b.array() - mb)).sum();
    const double va = (a.array() - ma).square().sum();
    const double vb = (b.array() - mb).square().sum();
    if (va > 0 && vb > 0) {
      lag1 += cov / std::sqrt(va * vb);
      ++lag1_rows;
    }
  }
  json out{{"users", g.rows()},
           {"slots", g.cols()},
           {"mean_gain", g.mean()},
           {"min_gain", g.minCoeff()},
           {"max_gain", g.maxCoeff()},
           {"gain_lag1_autocorr", lag1_rows ? lag1 / lag1_rows : 0.0},
           {"generator", trace.generator}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_solve(const ConfigArgs& cargs, const std::string& rounding, bool reopt,
              const std::string& out_prefix, const std::string& messages_path) {
  ExperimentConfig cfg = resolve_config(cargs);
  if (rounding == "smart")
    cfg.rounding = fedsched::RoundingMode::kSmart;
  else if (rounding == "simple")
    cfg.rounding = fedsched::RoundingMode::kSimple;
  else if (!rounding.empty())
    throw CLI::ValidationError("--rounding must be simple or smart");
  if (reopt) cfg.reoptimize = true;

  const Mat plan = fedsched::planning_gains(cfg, cfg.seed);
  const fedsched::ProblemInstance inst = fedsched::make_instance(cfg, plan);
  fedsched::PipelineOptions opt = cfg.pipeline_options();
  fedsched::MessageLog log;
  if (!messages_path.empty()) {
    log.enabled = true;
    opt.tap = &log;
  }

  json summary;
  summary["problem"] = cfg.problem;
  summary["config_hash"] = fedsched::config_hash(cfg);
  summary["seed"] = cfg.seed;
  summary["method"] = std::string(cfg.rounding == fedsched::RoundingMode::kSmart ? "smart"
                                                                                 : "simple") +
                      (cfg.reoptimize ? "+reopt" : "");

  if (cfg.problem == "p2") {
    const fedsched::BlockScheduleResult br = fedsched::block_schedule(inst, opt);
    if (!messages_path.empty()) fedsched::write_message_jsonl(messages_path, log);
    if (!br.complete) {
      std::cerr << "infeasible: " << br.failure << "\n";
      throw InfeasibleError(br.failure);
    }
    Mat x = Mat::Zero(cfg.n_users, cfg.horizon);
    Mat w = Mat::Zero(cfg.n_users, cfg.horizon);
    json blocks = json::array();
    int offset = 0;
    for (const auto& b : br.blocks) {
      const int ts = b.schedule.x.cols();
      x.middleCols(offset, ts) = b.schedule.x;
      w.middleCols(offset, ts) = b.schedule.w;
      blocks.push_back({{"offset", offset},
                        {"slots", ts},
                        {"gamma", b.gamma_final},
                        {"boosted_bandwidth_hz", b.schedule.boosted_bandwidth_hz},
                        {"times", times_json(b.times)}});
      offset += ts;
    }
    write_matrix_csv(out_prefix + "_x.csv", x);
    write_matrix_csv(out_prefix + "_w.csv", w);
    summary["feasible"] = true;
    summary["blocks"] = blocks;
    summary["planned_fractions"] = br.planned_fractions;
    summary["total_s"] = br.total_seconds;
  } else {
    const fedsched::ScheduleResult res = cfg.problem == "p3"
                                             ? fedsched::feasible_slot_schedule(inst, opt)
                                             : fedsched::fair_point_schedule(inst, opt);
    if (!messages_path.empty()) fedsched::write_message_jsonl(messages_path, log);
    if (!res.feasible) {
      std::cerr << "infeasible: " << res.failure << "\n";
      throw InfeasibleError(res.failure);
    }
    write_matrix_csv(out_prefix + "_x.csv", res.schedule.x);
    if (res.schedule.w.size() > 0) write_matrix_csv(out_prefix + "_w.csv", res.schedule.w);
    summary["feasible"] = true;
    summary["horizon_used"] = res.horizon_used;
    summary["gamma"] = res.gamma_final;
    summary["selected_draw"] = res.selected_draw;
    summary["outer_rounds_total"] = res.outer_rounds_total;
    if (res.boost_bandwidth_hz > 0) summary["boosted_bandwidth_hz"] = res.boost_bandwidth_hz;
    if (res.boost_energy_total_j > 0) summary["boost_energy_total_j"] = res.boost_energy_total_j;
    summary["constraints_satisfied"] = res.violations.satisfied;
    summary["times"] = times_json(res.times);
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int run_oracle(const ConfigArgs& cargs, const std::string& out_path) {
  ExperimentConfig cfg = resolve_config(cargs);
  if (cfg.problem == "p2")
    throw CLI::ValidationError("the reference solver covers p1 and p3 only");

  const Mat plan = fedsched::planning_gains(cfg, cfg.seed);
  const fedsched::ProblemInstance inst = fedsched::make_instance(cfg, plan);
  const fedsched::OracleResult res = cfg.problem == "p3"
                                         ? fedsched::min_horizon_fixed_rate(inst, cfg.horizon)
                                         : fedsched::min_horizon_shared_band(inst, cfg.horizon);

  json out{{"problem", cfg.problem},
           {"config_hash", fedsched::config_hash(cfg)},
           {"feasible", res.feasible},
           {"refused", res.refused},
           {"t_star", res.t_star},
           {"gamma_star", res.gamma_star},
           {"gamma_upper", res.gamma_upper},
           {"enumerated", res.enumerated},
           {"seconds", res.seconds}};
  std::cout << out.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot open " + out_path + " for writing");
    f << out.dump(2) << "\n";
  }
  if (res.refused) throw std::runtime_error("reference solver refused: instance too large");
  if (!res.feasible) throw InfeasibleError("no feasible horizon within the cap");
  return 0;
}

int run_set(int which, const ConfigArgs& cargs, const std::string& out_path,
            const std::string& sweep, const std::vector<double>& values, int runs_override) {
  ExperimentConfig cfg = resolve_config(cargs);
  if (!sweep.empty()) {
    cfg.sweep_parameter = sweep;
    cfg.sweep_values = values;
  }
  if (runs_override > 0) cfg.runs = runs_override;
  cfg.validate();
  const std::vector<fedsched::ResultRow> rows = which == 1   ? fedsched::run_set1(cfg)
                                                : which == 2 ? fedsched::run_set2(cfg)
                                                             : fedsched::run_set3(cfg);
  fedsched::write_rows_csv(out_path, rows);
  std::cerr << "wrote " << rows.size() << " rows to " << out_path << "\n";
  bool aborted = false;
  for (const auto& r : rows) aborted = aborted || r.metric == "aborted";
  if (aborted) throw InfeasibleError("one or more sweep points aborted");
  return 0;
}

// Structural message audit: every recorded boundary crossing must be one of
// the declared message kinds carrying only its declared fields, and every
// vector must have been reduced to a {len, norm2} summary. Raw gains,
// demands, budgets and powers have no field to hide in.
int run_audit(const ConfigArgs& cargs, const std::string& out_path) {
  ExperimentConfig cfg = resolve_config(cargs);
  const Mat plan = fedsched::planning_gains(cfg, cfg.seed);
  const fedsched::ProblemInstance inst = fedsched::make_instance(cfg, plan);
  fedsched::PipelineOptions opt = cfg.pipeline_options();
  fedsched::MessageLog log;
  log.enabled = true;
  opt.tap = &log;

  if (cfg.problem == "p2")
    fedsched::block_schedule(inst, opt);
  else if (cfg.problem == "p3")
    fedsched::feasible_slot_schedule(inst, opt);
  else
    fedsched::fair_point_schedule(inst, opt);

  fedsched::write_message_jsonl(out_path, log);

  std::ifstream f(out_path);
  if (!f) throw std::runtime_error("cannot reopen " + out_path);
  std::string line;
  long long total = 0, breaches = 0;
  std::map<std::string, long long> per_kind;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ++total;
    const json j = json::parse(line);
    const std::string kind = j.at("kind").get<std::string>();
    std::set<std::string> allowed;
    try {
      for (const auto& name : fedsched::message_field_names(kind)) allowed.insert(name);
    } catch (const std::invalid_argument&) {
      std::cerr << "audit: unknown message kind '" << kind << "'\n";
      ++breaches;
      continue;
    }
    // The report payload's own kind field is serialized as "report" because
    // "kind" names the message type on the wire.
    if (kind == "client_report") {
      allowed.erase("kind");
      allowed.insert("report");
    }
    ++per_kind[kind];
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") continue;
      if (!allowed.count(key)) {
        std::cerr << "audit: undeclared field '" << key << "' on " << kind << "\n";
        ++breaches;
      }
      if (value.is_array()) {
        std::cerr << "audit: raw array leaked in field '" << key << "' of " << kind << "\n";
        ++breaches;
      }
      if (value.is_object()) {
        std::set<std::string> keys;
        for (const auto& [k2, v2] : value.items()) keys.insert(k2);
        if (keys != std::set<std::string>{"len", "norm2"}) {
          std::cerr << "audit: field '" << key << "' of " << kind
                    << " is not a {len, norm2} summary\n";
          ++breaches;
        }
      }
    }
  }

  json report{{"messages", total}, {"breaches", breaches}, {"log", out_path}};
  for (const auto& [k, v] : per_kind) report["by_kind"][k] = v;
  std::cout << report.dump(2) << "\n";
  if (breaches > 0) throw std::runtime_error("message audit found undeclared content");
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated transmission scheduling toolkit"};
  app.require_subcommand(1);

  // trace
  auto* trace = app.add_subcommand("trace", "generate or inspect channel traces");
  trace->require_subcommand(1);
  std::string tr_in, tr_out_csv, tr_out_cache;
  bool tr_in_cache = false;
  int tr_n = 4, tr_t = 16;
  std::uint64_t tr_seed = 1;
  double tr_speed = 10.0, tr_tau = 5e-3;
  fedsched::MobilityConfig tr_mob;
  auto* tgen = trace->add_subcommand("generate", "draw a fresh mobility/fading trace");
  tgen->add_option("--out", tr_out_csv, "trace CSV path");
  tgen->add_option("--cache", tr_out_cache, "binary trace cache path");
  tgen->add_option("--n", tr_n, "number of users");
  tgen->add_option("--t", tr_t, "number of slots");
  tgen->add_option("--seed", tr_seed, "trace seed");
  tgen->add_option("--speed-kmh", tr_speed, "user speed in km/h");
  tgen->add_option("--tau-s", tr_tau, "slot length in seconds");
  tgen->add_option("--cell-m", tr_mob.cell_radius_m, "cell radius in meters");
  tgen->add_option("--carrier-hz", tr_mob.carrier_hz, "carrier frequency");
  tgen->add_option("--alpha", tr_mob.pathloss_exp, "path loss exponent");
  auto* tins = trace->add_subcommand("inspect", "print summary statistics of a stored trace");
  tins->add_option("--in", tr_in, "trace file to read")->required();
  tins->add_flag("--from-cache", tr_in_cache, "read the binary cache format");

  // solve
  auto* solve = app.add_subcommand("solve", "plan one instance with one method");
  ConfigArgs solve_cfg;
  add_config_options(solve, solve_cfg);
  std::string solve_rounding, solve_prefix = "solve_out", solve_messages;
  bool solve_reopt = false;
  solve->add_option("--rounding", solve_rounding, "simple | smart");
  solve->add_flag("--reopt", solve_reopt, "re-optimize shares after rounding");
  solve->add_option("--out-prefix", solve_prefix, "output file prefix");
  solve->add_option("--messages", solve_messages, "dump boundary messages to this JSONL file");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "exhaustive reference solve (small instances)");
  ConfigArgs oracle_cfg;
  add_config_options(oracle, oracle_cfg);
  std::string oracle_out;
  oracle->add_option("--out", oracle_out, "also write the result JSON here");

  // experiment sets
  ConfigArgs set_cfg[3];
  std::string set_out[3], set_sweep[3];
  std::vector<double> set_values[3];
  int set_runs[3] = {0, 0, 0};
  CLI::App* sets[3];
  const char* set_help[3] = {"boost experiments on planning gains",
                             "violation experiments on fresh realizations",
                             "stage runtime across the tolerance grid"};
  for (int i = 0; i < 3; ++i) {
    sets[i] = app.add_subcommand("set" + std::to_string(i + 1), set_help[i]);
    add_config_options(sets[i], set_cfg[i]);
    sets[i]->add_option("--out", set_out[i], "result rows CSV")->required();
    sets[i]->add_option("--runs", set_runs[i], "override the run count");
    if (i < 2) {
      sets[i]->add_option("--sweep", set_sweep[i], "config key to sweep");
      sets[i]->add_option("--values", set_values[i], "swept values")->delimiter(',');
    }
  }

  // audit
  auto* audit = app.add_subcommand("audit", "run one solve with the message tap and audit the log");
  ConfigArgs audit_cfg;
  add_config_options(audit, audit_cfg);
  std::string audit_out = "messages.jsonl";
  audit->add_option("--out", audit_out, "message log path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (tgen->parsed())
      return run_trace("generate", tr_in, tr_in_cache, tr_out_csv, tr_out_cache, tr_n, tr_t,
                       tr_seed, tr_speed, tr_tau, tr_mob);
    if (tins->parsed())
      return run_trace("inspect", tr_in, tr_in_cache, tr_out_csv, tr_out_cache, tr_n, tr_t,
                       tr_seed, tr_speed, tr_tau, tr_mob);
    if (solve->parsed())
      return run_solve(solve_cfg, solve_rounding, solve_reopt, solve_prefix, solve_messages);
    if (oracle->parsed()) return run_oracle(oracle_cfg, oracle_out);
    for (int i = 0; i < 3; ++i)
      if (sets[i]->parsed())
        return run_set(i + 1, set_cfg[i], set_out[i], set_sweep[i], set_values[i], set_runs[i]);
    if (audit->parsed()) return run_audit(audit_cfg, audit_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const InfeasibleError&) {
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
