#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <optional>

#include "fedsched/adapters.hpp"
#include "fedsched/model.hpp"
#include "fedsched/oracle.hpp"
#include "fedsched/scheduler.hpp"

using namespace fedsched;

namespace {

SystemParams lab_params(int horizon) {
  SystemParams p;
  p.bandwidth_hz = 9e6;
  p.noise_w_hz = 3.9810717055349565e-21;
  p.slot_s = 5e-3;
  p.horizon = horizon;
  return p;
}

ProblemInstance shared_band(const Mat& gains, const Vec& demands,
                            const std::vector<int>& budgets,
                            Variant variant = Variant::kBandwidthShare) {
  ProblemInstance inst;
  inst.variant = variant;
  inst.params = lab_params(static_cast<int>(gains.cols()));
  for (int m = 0; m < gains.rows(); ++m) {
    UserBandwidthData u;
    u.demand_bits = demands(m);
    u.tx_power_w = 0.1;
    u.energy_slots = budgets[m];
    u.gains = gains.row(m).transpose();
    inst.bw_users.push_back(u);
  }
  return inst;
}

ProblemInstance fixed_rate(const Mat& powers, const Vec& demands, const Vec& budgets,
                           double rate) {
  ProblemInstance inst;
  inst.variant = Variant::kFixedRate;
  inst.params = lab_params(static_cast<int>(powers.cols()));
  inst.params.fixed_rate_bps = rate;
  for (int m = 0; m < powers.rows(); ++m) {
    UserFixedRateData u;
    u.demand_bits = demands(m);
    u.energy_budget_j = budgets(m);
    u.slot_power_w = powers.row(m).transpose();
    inst.fr_users.push_back(u);
  }
  return inst;
}

double full_slot_bits(const SystemParams& p, double gain) {
  return p.slot_s * rate_bps(1.0, gain, 0.1, p);
}

bool is_integral(const Mat& x) {
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j)
      if (x(i, j) != 0.0 && x(i, j) != 1.0) return false;
  return true;
}

} // namespace

TEST_CASE("window_instance slices traces and validates bounds") {
  Mat gains(1, 4);
  gains << 1e-9, 2e-9, 3e-9, 4e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 1e5), {4});

  ProblemInstance win = window_instance(inst, 1, 2);
  CHECK(win.params.horizon == 2);
  CHECK(win.bw_users[0].gains(0) == 2e-9);
  CHECK(win.bw_users[0].gains(1) == 3e-9);
  CHECK_THROWS(window_instance(inst, 3, 2));
  CHECK_THROWS(window_instance(inst, -1, 2));
  CHECK_THROWS(window_instance(inst, 0, 0));
}

TEST_CASE("horizon search finds the threshold with few probes") {
  int probes = 0;
  auto probe = [&](int t) -> std::optional<FractionalSolution> {
    ++probes;
    if (t < 5) return std::nullopt;
    FractionalSolution fs;
    fs.feasible = true;
    fs.gamma_exact = t; // marker to confirm which solve is carried out
    return fs;
  };
  HorizonSearch hs = search_min_horizon(probe, 64);
  CHECK(hs.found);
  CHECK(hs.horizon == 5);
  CHECK(hs.solution.gamma_exact == 5.0);
  CHECK(hs.probes == probes);
  CHECK(probes <= 2 * 7); // doubling plus bisection on 64

  HorizonSearch none = search_min_horizon(
      [&](int) -> std::optional<FractionalSolution> { return std::nullopt; }, 16);
  CHECK(!none.found);

  HorizonSearch capped = search_min_horizon(probe, 4);
  CHECK(!capped.found);
}

TEST_CASE("bandwidth relaxation: repaired solution respects the share geometry") {
  SystemParams p = lab_params(2);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(2, 2, 1e-9);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.5 * full), {2, 2});

  PipelineOptions opt;
  FractionalSolution fs = solve_bandwidth_relaxation(inst, opt);
  CHECK(fs.feasible);
  CHECK(fs.gamma_exact >= 1.0 - opt.gamma_tol);
  CHECK(fs.x.maxCoeff() <= 1.0 + 1e-12);
  CHECK(fs.x.minCoeff() >= -1e-12);
  CHECK((fs.w - fs.w.cwiseMin(fs.x)).cwiseAbs().maxCoeff() <= 1e-12);
  for (int t = 0; t < 2; ++t) CHECK(fs.w.col(t).sum() <= 1.0 + 1e-9);
  for (int m = 0; m < 2; ++m) CHECK(fs.x.row(m).sum() <= 2.0 + 1e-9);
}

TEST_CASE("bandwidth relaxation: hopeless demand is reported infeasible") {
  Mat gains = Mat::Constant(1, 2, 1e-9);
  SystemParams p = lab_params(2);
  // Far beyond what two full-band slots can move.
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 10 * full_slot_bits(p, 1e-9)), {2});
  PipelineOptions opt;
  FractionalSolution fs = solve_bandwidth_relaxation(inst, opt);
  CHECK(!fs.feasible);
  CHECK(fs.gamma_exact < 0.5);
}

TEST_CASE("share re-optimization at fixed slots only improves exact service") {
  Mat gains(2, 2);
  gains << 4e-9, 1e-9, 1e-9, 4e-9;
  SystemParams p = lab_params(2);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, full_slot_bits(p, 1e-9)), {2, 2});

  Mat x_fixed = Mat::Ones(2, 2);
  Mat w_naive = Mat::Constant(2, 2, 0.5);
  const double gamma_naive = min_served_fraction(inst, w_naive, p.bandwidth_hz);

  PipelineOptions opt;
  ReoptResult rr = reoptimize_shares(inst, x_fixed, opt, &w_naive);
  CHECK(rr.gamma_exact >= gamma_naive - 5e-3);
  CHECK((rr.w - rr.w.cwiseMin(x_fixed)).cwiseAbs().maxCoeff() <= 1e-12);
  for (int t = 0; t < 2; ++t) CHECK(rr.w.col(t).sum() <= 1.0 + 1e-9);
}

TEST_CASE("bandwidth boost: bisection lands just above the feasibility edge") {
  SystemParams p = lab_params(2);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(1, 2, 1e-9);
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 1.1 * 2 * full), {2});

  Mat x = Mat::Ones(1, 2);
  Mat w = Mat::Ones(1, 2);
  PipelineOptions opt;
  BoostOutcome bo = boost_bandwidth(inst, x, w, 1.0, opt);
  REQUIRE(bo.ok);
  CHECK(bo.bandwidth_hz > p.bandwidth_hz);
  CHECK(bo.bandwidth_hz <= p.bandwidth_hz * opt.boost_cap_factor);
  CHECK(min_served_fraction(inst, w, bo.bandwidth_hz) >= 1.0);
  // One bisection notch lower must be infeasible.
  CHECK(min_served_fraction(inst, w, bo.bandwidth_hz / (1.0 + 3 * opt.boost_rel_precision)) <
        1.0);

  // No boost needed when the demand is easy.
  ProblemInstance easy = shared_band(gains, Vec::Constant(1, 0.5 * full), {2});
  BoostOutcome none = boost_bandwidth(easy, x, w, 1.0, opt);
  CHECK(none.ok);
  CHECK(none.bandwidth_hz == p.bandwidth_hz);

  // Absurd demand exceeds the cap.
  ProblemInstance hopeless = shared_band(gains, Vec::Constant(1, 500 * full), {2});
  CHECK(!boost_bandwidth(hopeless, x, w, 1.0, opt).ok);
}

TEST_CASE("fair-point pipeline solves a two-user instance end to end") {
  SystemParams p = lab_params(4);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(2, 4, 1e-9);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.6 * full), {4, 4});

  PipelineOptions opt;
  opt.seed = 42;
  ScheduleResult res = fair_point_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(is_integral(res.schedule.x));
  CHECK(res.violations.satisfied);
  CHECK(res.gamma_final >= 1.0 - opt.gamma_tol);
  CHECK(res.selected_draw >= 0);

  // One contested slot cannot carry both demands, so at least two slots.
  OracleResult oracle = min_horizon_shared_band(inst, 4);
  REQUIRE(oracle.feasible);
  CHECK(oracle.t_star == 2);
  CHECK(res.horizon_used >= oracle.t_star);
  CHECK(res.horizon_used <= 3);

  // Shares never exceed slots or the band.
  CHECK((res.schedule.w - res.schedule.w.cwiseMin(res.schedule.x)).cwiseAbs().maxCoeff() <=
        1e-12);
  for (int t = 0; t < res.horizon_used; ++t)
    CHECK(res.schedule.w.col(t).sum() <= 1.0 + 1e-9);
}

TEST_CASE("fair-point pipeline is deterministic in the seed") {
  SystemParams p = lab_params(3);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains(2, 3);
  gains << 1e-9, 2e-9, 5e-10, 8e-10, 1e-9, 3e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.4 * full), {3, 3});

  PipelineOptions opt;
  opt.seed = 7;
  ScheduleResult a = fair_point_schedule(inst, opt);
  ScheduleResult b = fair_point_schedule(inst, opt);
  REQUIRE(a.feasible);
  REQUIRE(b.feasible);
  CHECK((a.schedule.x - b.schedule.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.boost_bandwidth_hz == b.boost_bandwidth_hz);
  CHECK(a.horizon_used == b.horizon_used);
}

TEST_CASE("fair-point pipeline honors slot budgets after rounding") {
  SystemParams p = lab_params(4);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(2, 4, 1e-9);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.3 * full), {1, 1});

  PipelineOptions opt;
  ScheduleResult res = fair_point_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(res.schedule.x.row(0).sum() <= 1.0);
  CHECK(res.schedule.x.row(1).sum() <= 1.0);
  CHECK(res.violations.satisfied);
}

TEST_CASE("fair-point pipeline with smart rounding and re-optimization") {
  SystemParams p = lab_params(4);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains(2, 4);
  gains << 1e-8, 1e-11, 1e-8, 1e-11, 1e-11, 1e-8, 1e-11, 1e-8;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.2 * full), {4, 4});

  PipelineOptions opt;
  opt.rounding = RoundingMode::kSmart;
  opt.reoptimize = true;
  opt.rounding_draws = 3;
  ScheduleResult res = fair_point_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(res.violations.satisfied);
  CHECK(is_integral(res.schedule.x));
}

TEST_CASE("fair-point pipeline reports failure when no horizon works") {
  SystemParams p = lab_params(2);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(1, 2, 1e-9);
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 1000 * full), {2});

  PipelineOptions opt;
  ScheduleResult res = fair_point_schedule(inst, opt);
  CHECK(!res.feasible);
  CHECK(!res.failure.empty());
}

TEST_CASE("slot pipeline matches the exact minimal horizon on an easy instance") {
  const double R = 8e7;
  SystemParams p = lab_params(6);
  Mat powers = Mat::Constant(2, 6, 0.01);
  Vec demands(2);
  demands << 2 * R * p.slot_s, 1 * R * p.slot_s;
  ProblemInstance inst = fixed_rate(powers, demands, Vec::Constant(2, 1.0), R);

  PipelineOptions opt;
  ScheduleResult res = feasible_slot_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(res.horizon_used == 3); // one user per slot, three slot-needs total
  CHECK(res.violations.satisfied);
  CHECK(is_integral(res.schedule.x));
  CHECK(res.boost_energy_total_j == 0.0);
  CHECK(res.schedule.x.colwise().sum().maxCoeff() <= 1.0);

  OracleResult oracle = min_horizon_fixed_rate(inst, 6);
  REQUIRE(oracle.feasible);
  CHECK(res.horizon_used == oracle.t_star);
}

TEST_CASE("slot pipeline boosts energy exactly to what the schedule burns") {
  const double R = 8e7;
  SystemParams p = lab_params(4);
  Mat powers = Mat::Constant(1, 4, 0.1);
  Vec demands(1);
  demands << 2 * R * p.slot_s; // needs two slots
  const double per_slot = 0.1 * p.slot_s;
  // Budget falls one tenth of a slot short of the two the demand requires; the
  // pipeline has to top the account up by exactly that difference.
  ProblemInstance inst = fixed_rate(powers, demands, Vec::Constant(1, 1.9 * per_slot), R);

  PipelineOptions opt;
  ScheduleResult res = feasible_slot_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(res.schedule.x.row(0).sum() == 2.0);
  CHECK(res.boost_energy_total_j == doctest::Approx(0.1 * per_slot).epsilon(1e-9));
  REQUIRE(res.schedule.boosted_energy_j.size() == 1);
  CHECK(res.schedule.boosted_energy_j(0) == doctest::Approx(2 * per_slot).epsilon(1e-12));
  CHECK(res.violations.satisfied);
}

TEST_CASE("slot pipeline avoids unreachable slots") {
  const double R = 8e7;
  SystemParams p = lab_params(4);
  const double inf = std::numeric_limits<double>::infinity();
  Mat powers(1, 4);
  powers << inf, 0.01, inf, 0.01;
  Vec demands(1);
  demands << 2 * R * p.slot_s;
  ProblemInstance inst = fixed_rate(powers, demands, Vec::Constant(1, 1.0), R);

  PipelineOptions opt;
  ScheduleResult res = feasible_slot_schedule(inst, opt);
  REQUIRE(res.feasible);
  CHECK(res.schedule.x(0, 0) == 0.0);
  CHECK(res.schedule.x(0, 2) == 0.0);
  CHECK(res.schedule.x(0, 1) + res.schedule.x(0, 3) == 2.0);
  CHECK(res.horizon_used == 4);
}

TEST_CASE("block pipeline drains demand across blocks") {
  SystemParams p = lab_params(8);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(2, 8, 1e-9);
  // Roughly 1.3 blocks of work per user: two slots each per 4-slot block.
  Vec demands = Vec::Constant(2, 2.6 * full);
  ProblemInstance inst = shared_band(gains, demands, {8, 8}, Variant::kBlockShare);
  inst.params.block_slots = 4;

  PipelineOptions opt;
  opt.seed = 5;
  BlockScheduleResult res = block_schedule(inst, opt);
  REQUIRE(res.failure.empty());
  CHECK(res.complete);
  CHECK(res.blocks.size() == 2);
  for (std::size_t b = 0; b < res.blocks.size(); ++b) {
    const ScheduleResult& br = res.blocks[b];
    CHECK(br.feasible);
    CHECK(br.violations.satisfied);
    CHECK(is_integral(br.schedule.x));
    CHECK(res.planned_fractions[b] > 0.0);
    CHECK(res.planned_fractions[b] <= 1.0);
  }
  // First block cannot finish the job; the plan must say so.
  CHECK(res.planned_fractions[0] < 1.0);
}

TEST_CASE("block pipeline respects carried-over slot budgets") {
  SystemParams p = lab_params(8);
  const double full = full_slot_bits(p, 1e-9);
  Mat gains = Mat::Constant(1, 8, 1e-9);
  // Demand worth ~3 full-band slots but only 3 total slots of energy.
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 2.9 * full), {3},
                                     Variant::kBlockShare);
  inst.params.block_slots = 4;

  PipelineOptions opt;
  BlockScheduleResult res = block_schedule(inst, opt);
  double slots_spent = 0;
  for (const ScheduleResult& br : res.blocks) slots_spent += br.schedule.x.sum();
  CHECK(slots_spent <= 3.0);
}

TEST_CASE("pipelines reject mismatched variants") {
  Mat gains = Mat::Constant(1, 2, 1e-9);
  ProblemInstance bw = shared_band(gains, Vec::Constant(1, 1e3), {2});
  Mat powers = Mat::Constant(1, 2, 0.01);
  ProblemInstance fr = fixed_rate(powers, Vec::Constant(1, 1e3), Vec::Constant(1, 1.0), 8e7);

  PipelineOptions opt;
  CHECK_THROWS(fair_point_schedule(fr, opt));
  CHECK_THROWS(feasible_slot_schedule(bw, opt));
  CHECK_THROWS(block_schedule(bw, opt));
  CHECK_THROWS(block_schedule(fr, opt));
}
