#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedsched/harness.hpp"

using namespace fedsched;

namespace {

// Tiny sweep setup that keeps every harness test inside a few seconds.
ExperimentConfig tiny_config(const std::string& problem) {
  ExperimentConfig cfg = desk_config();
  cfg.problem = problem;
  cfg.n_users = 2;
  cfg.horizon = 6;
  cfg.block_slots = 3;
  cfg.demand_bits = 1.5e5;
  cfg.realizations = 2;
  cfg.runs = 2;
  cfg.seed = 7;
  return cfg;
}

std::string row_key(const ResultRow& r) {
  std::ostringstream os;
  os << r.schema << '|' << r.experiment << '|' << r.hash << '|' << r.seed << '|'
     << r.parameter << '|' << r.value << '|' << r.method << '|' << r.metric << '|'
     << r.metric_value;
  return os.str();
}

std::vector<std::string> keys(const std::vector<ResultRow>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(row_key(r));
  return out;
}

} // namespace

TEST_CASE("desk profile shrinks the published scale") {
  const ExperimentConfig cfg = desk_config();
  CHECK(cfg.n_users == 4);
  CHECK(cfg.horizon == 16);
  CHECK(cfg.block_slots == 4);
  CHECK(cfg.demand_bits == doctest::Approx(4e5));
  CHECK(cfg.realizations == 20);
  CHECK(cfg.runs == 50);
  // untouched fields keep the full-scale defaults
  const ExperimentConfig full;
  CHECK(cfg.bandwidth_hz == full.bandwidth_hz);
  CHECK(cfg.hyper.penalty_beta == full.hyper.penalty_beta);
}

TEST_CASE("config json round trip preserves the hash") {
  ExperimentConfig cfg = desk_config();
  cfg.problem = "p2";
  cfg.sweep_parameter = "B_hz";
  cfg.sweep_values = {5e6, 9e6};
  cfg.seed = 321;
  cfg.rounding = RoundingMode::kSmart;
  cfg.reoptimize = true;

  const std::string text = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.problem == "p2");
  CHECK(back.sweep_values == cfg.sweep_values);
  CHECK(back.reoptimize == cfg.reoptimize);

  CHECK(config_hash(cfg).size() == 16);
  ExperimentConfig other = cfg;
  other.demand_bits += 1.0;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("profile key seeds the desk values before overrides") {
  const ExperimentConfig cfg =
      config_from_json(R"({"profile": "desk", "problem": "p3", "T": 12})");
  CHECK(cfg.n_users == 4);
  CHECK(cfg.horizon == 12);
  CHECK(cfg.problem == "p3");
}

TEST_CASE("power keys accept dbm forms") {
  const ExperimentConfig p = config_from_json(R"({"P_dbm": 20.0})");
  CHECK(p.tx_power_w == doctest::Approx(0.1).epsilon(1e-12));
  const ExperimentConfig n = config_from_json(R"({"N0_dbm_hz": -174.0})");
  CHECK(n.noise_w_hz == doctest::Approx(3.9810717055349565e-21).epsilon(1e-12));
  CHECK_THROWS(config_from_json(R"({"P_w": 0.1, "P_dbm": 20.0})"));
  CHECK_THROWS(config_from_json(R"({"unknown_key": 1.0})"));
}

TEST_CASE("apply_parameter hits the matching field and rejects strangers") {
  ExperimentConfig cfg = desk_config();
  apply_parameter(cfg, "N", 6.0);
  CHECK(cfg.n_users == 6);
  apply_parameter(cfg, "B_hz", 5e6);
  CHECK(cfg.bandwidth_hz == doctest::Approx(5e6));
  apply_parameter(cfg, "C_bits", 2e5);
  CHECK(cfg.demand_bits == doctest::Approx(2e5));
  apply_parameter(cfg, "v_kmh", 3.0);
  CHECK(cfg.speed_kmh == doctest::Approx(3.0));
  CHECK_THROWS(apply_parameter(cfg, "no_such_key", 1.0));
}

TEST_CASE("validate rejects broken configurations") {
  ExperimentConfig cfg = desk_config();
  cfg.validate();
  ExperimentConfig bad = cfg;
  bad.problem = "p9";
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.problem = "p2";
  bad.block_slots = 5; // does not divide 16
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.sweep_parameter = "C_bits";
  bad.sweep_values.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("instances take their shape from the problem id") {
  ExperimentConfig cfg = tiny_config("p1");
  const Mat gains = planning_gains(cfg, 5);
  REQUIRE(gains.rows() == cfg.n_users);
  REQUIRE(gains.cols() == cfg.horizon);

  const ProblemInstance p1 = make_instance(cfg, gains);
  CHECK(p1.variant == Variant::kBandwidthShare);
  REQUIRE(static_cast<int>(p1.bw_users.size()) == cfg.n_users);
  CHECK(p1.bw_users[0].gains == gains.row(0).transpose());
  CHECK(p1.bw_users[1].gains == gains.row(1).transpose());
  CHECK(p1.bw_users[0].energy_slots > 0);
  CHECK(p1.params.bandwidth_hz == doctest::Approx(cfg.bandwidth_hz));

  cfg.problem = "p2";
  const ProblemInstance p2 = make_instance(cfg, gains);
  CHECK(p2.variant == Variant::kBlockShare);
  CHECK(p2.params.block_slots == cfg.block_slots);

  cfg.problem = "p3";
  const ProblemInstance p3 = make_instance(cfg, gains);
  CHECK(p3.variant == Variant::kFixedRate);
  REQUIRE(static_cast<int>(p3.fr_users.size()) == cfg.n_users);
  CHECK(p3.fr_users[0].slot_power_w.size() == cfg.horizon);
  CHECK((p3.fr_users[0].slot_power_w.array() > 0).all());
  CHECK(p3.fr_users[0].energy_budget_j == doctest::Approx(cfg.energy_budget_j));
}

TEST_CASE("deterministic channel mode collapses planning and execution") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.deterministic_channel = true;
  const Mat plan = planning_gains(cfg, 5);
  const Mat exec0 = execution_gains(cfg, 5, 0);
  const Mat exec7 = execution_gains(cfg, 99, 7);
  CHECK(plan == exec0);
  CHECK(plan == exec7);
  // distance-only gains are constant over time and ordered by distance
  for (int m = 0; m < cfg.n_users; ++m)
    CHECK(plan.row(m).maxCoeff() == doctest::Approx(plan.row(m).minCoeff()));
  CHECK(plan(0, 0) > plan(1, 0));
}

TEST_CASE("stochastic gains differ across realizations but share the seed") {
  const ExperimentConfig cfg = tiny_config("p1");
  const Mat a = execution_gains(cfg, 5, 0);
  const Mat b = execution_gains(cfg, 5, 1);
  CHECK(a != b);
  CHECK(execution_gains(cfg, 5, 0) == a);
  CHECK(planning_gains(cfg, 5) == planning_gains(cfg, 5));
  CHECK((a.array() > 0).all());
}

TEST_CASE("result rows are deterministic and worker-count independent") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.sweep_parameter = "C_bits";
  cfg.sweep_values = {1e5, 2e5};

  setenv("FEDSCHED_WORKERS", "1", 1);
  CHECK(worker_count() == 1);
  const auto serial = keys(run_set1(cfg));
  const auto again = keys(run_set1(cfg));
  setenv("FEDSCHED_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  const auto pooled = keys(run_set1(cfg));
  unsetenv("FEDSCHED_WORKERS");

  CHECK(serial == again);
  CHECK(serial == pooled);
  CHECK(!serial.empty());
}

TEST_CASE("set1 rows carry the expected methods and metrics") {
  ExperimentConfig cfg = tiny_config("p1");
  const auto rows = run_set1(cfg);
  REQUIRE(!rows.empty());
  bool saw_boost = false, saw_mean = false, saw_reopt = false;
  for (const auto& r : rows) {
    CHECK(r.experiment == "set1");
    CHECK(r.schema == 1);
    CHECK(r.parameter == "-");
    if (r.metric == "bandwidth_boost_hz") saw_boost = true;
    if (r.metric == "mean_bandwidth_boost_hz") saw_mean = true;
    if (r.method == "smart+reopt") saw_reopt = true;
    CHECK(r.hash == config_hash(cfg));
  }
  CHECK(saw_boost);
  CHECK(saw_mean);
  CHECK(saw_reopt);
}

TEST_CASE("ample base bandwidth needs no boost") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.demand_bits = 1e3; // a single slot serves this at base bandwidth
  for (const auto& r : run_set1(cfg))
    if (r.metric == "bandwidth_boost_hz" || r.metric == "mean_bandwidth_boost_hz")
      CHECK(r.metric_value == 0.0);
}

TEST_CASE("static control case executes the plan without violation") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.deterministic_channel = true;
  cfg.speed_kmh = 0.0;
  bool saw = false;
  for (const auto& r : run_set2(cfg))
    if (r.metric == "violation_pct" || r.metric == "mean_violation_pct") {
      CHECK(r.metric_value == 0.0);
      saw = true;
    }
  CHECK(saw);
}

TEST_CASE("set2 emits oracle rows at oracle-tractable sizes") {
  ExperimentConfig cfg = tiny_config("p3");
  cfg.demand_bits = 4e5;
  const auto rows = run_set2(cfg);
  bool oracle = false;
  for (const auto& r : rows)
    if (r.method == "oracle" && r.metric == "violation_pct") oracle = true;
  CHECK(oracle);
}

TEST_CASE("set3 reports stage times for every tolerance level") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.runs = 1;
  const auto rows = run_set3(cfg);
  int solve_rows = 0;
  bool budget = false;
  for (const auto& r : rows) {
    CHECK(r.experiment == "set3");
    if (r.metric == "solve_s") {
      CHECK(r.metric_value >= 0.0);
      ++solve_rows;
    }
    if (r.metric == "within_budget") budget = true;
  }
  CHECK(solve_rows >= 4); // one per tolerance grid level
  CHECK(budget);
}

TEST_CASE("rows csv uses the documented schema header") {
  ExperimentConfig cfg = tiny_config("p1");
  cfg.runs = 1;
  cfg.realizations = 1;
  const auto rows = run_set1(cfg);
  const auto path =
      (std::filesystem::temp_directory_path() / "fedsched_rows_test.csv").string();
  write_rows_csv(path, rows);
  std::ifstream in(path);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header ==
        "schema,experiment,config_hash,seed,parameter,value,method,metric,"
        "metric_value,wall_s");
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == static_cast<int>(rows.size()));
  in.close();
  std::remove(path.c_str());
}
