#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedsched/model.hpp"
#include "fedsched/oracle.hpp"
#include "fedsched/rng.hpp"

using namespace fedsched;

namespace {

constexpr double kInfD = std::numeric_limits<double>::infinity();

SystemParams lab_params(int horizon) {
  SystemParams p;
  p.bandwidth_hz = 9e6;
  p.noise_w_hz = 3.9810717055349565e-21;
  p.slot_s = 5e-3;
  p.horizon = horizon;
  return p;
}

ProblemInstance shared_band(const Mat& gains, const Vec& demands,
                            const std::vector<int>& budgets) {
  ProblemInstance inst;
  inst.variant = Variant::kBandwidthShare;
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
                           double rate_bps_fixed) {
  ProblemInstance inst;
  inst.variant = Variant::kFixedRate;
  inst.params = lab_params(static_cast<int>(powers.cols()));
  inst.params.fixed_rate_bps = rate_bps_fixed;
  for (int m = 0; m < powers.rows(); ++m) {
    UserFixedRateData u;
    u.demand_bits = demands(m);
    u.energy_budget_j = budgets(m);
    u.slot_power_w = powers.row(m).transpose();
    inst.fr_users.push_back(u);
  }
  return inst;
}

} // namespace

TEST_CASE("weighted slot split: single user takes the whole band") {
  Mat gains(2, 1);
  gains << 1e-9, 2e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 1e5), {1, 1});

  Vec theta(2);
  theta << 0.7, 0.3;
  Vec w;
  const double v = max_weighted_slot_rate(theta, {0}, inst, 0, &w);
  CHECK(v == doctest::Approx(0.7 * rate_bps(1.0, 1e-9, 0.1, inst.params)).epsilon(1e-12));
  CHECK(w(0) == doctest::Approx(1.0));
  CHECK(w(1) == 0.0);
}

TEST_CASE("weighted slot split: symmetric case splits the band in half") {
  Mat gains(2, 1);
  gains << 1e-9, 1e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 1e5), {1, 1});

  Vec theta = Vec::Constant(2, 0.5);
  Vec w;
  const double v = max_weighted_slot_rate(theta, {0, 1}, inst, 0, &w);
  CHECK(w(0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(w(1) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(v == doctest::Approx(rate_bps(0.5, 1e-9, 0.1, inst.params)).epsilon(1e-9));
}

TEST_CASE("weighted slot split: zero weight hands the band to the other user") {
  Mat gains(2, 1);
  gains << 1e-9, 5e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 1e5), {1, 1});

  Vec theta(2);
  theta << 1.0, 0.0;
  Vec w;
  max_weighted_slot_rate(theta, {0, 1}, inst, 0, &w);
  CHECK(w(0) == doctest::Approx(1.0));
  CHECK(w(1) == 0.0);
}

TEST_CASE("weighted slot split dominates every grid split") {
  CounterRng rng(404);
  for (int rep = 0; rep < 20; ++rep) {
    Mat gains(2, 1);
    gains(0, 0) = std::pow(10.0, -8.0 - 3.0 * rng.next_double());
    gains(1, 0) = std::pow(10.0, -8.0 - 3.0 * rng.next_double());
    ProblemInstance inst = shared_band(gains, Vec::Constant(2, 1e5), {1, 1});
    Vec theta(2);
    theta(0) = 0.05 + 0.9 * rng.next_double();
    theta(1) = 1.0 - theta(0);

    const double v = max_weighted_slot_rate(theta, {0, 1}, inst, 0);
    double best_grid = 0;
    for (int i = 0; i <= 100; ++i) {
      const double s = i / 100.0;
      best_grid = std::max(best_grid,
                           theta(0) * rate_bps(s, gains(0, 0), 0.1, inst.params) +
                               theta(1) * rate_bps(1 - s, gains(1, 0), 0.1, inst.params));
    }
    CHECK(v >= best_grid - 1e-9 * best_grid);
  }
}

TEST_CASE("service oracle: single user, all slots, known fraction") {
  Mat gains(1, 2);
  gains << 1e-9, 2e-9;
  SystemParams p = lab_params(2);
  const double served =
      p.slot_s * (rate_bps(1, 1e-9, 0.1, p) + rate_bps(1, 2e-9, 0.1, p));
  Vec demand(1);
  demand << 2.0 * served; // can serve exactly half of it
  ProblemInstance inst = shared_band(gains, demand, {2});

  OracleResult r = best_service_fraction(inst);
  REQUIRE(!r.refused);
  CHECK(r.gamma_star == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.dual_gap <= 1e-9);
  CHECK(!r.feasible);
  CHECK(r.x(0, 0) == 1.0);
  CHECK(r.x(0, 1) == 1.0);
  CHECK(r.enumerated == 1);
}

TEST_CASE("service oracle: slot budget one picks the better slot") {
  Mat gains(1, 2);
  gains << 1e-9, 4e-9;
  SystemParams p = lab_params(2);
  const double best_served = p.slot_s * rate_bps(1, 4e-9, 0.1, p);
  Vec demand(1);
  demand << best_served;
  ProblemInstance inst = shared_band(gains, demand, {1});

  OracleResult r = best_service_fraction(inst);
  REQUIRE(!r.refused);
  CHECK(r.gamma_star == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.feasible);
  CHECK(r.x(0, 1) == 1.0);
  CHECK(r.x(0, 0) == 0.0);
  CHECK(r.enumerated == 2);
}

TEST_CASE("service oracle: two users on one contested slot equalize") {
  Mat gains(2, 1);
  gains << 1e-9, 1e-9;
  SystemParams p = lab_params(1);
  const double half_served = p.slot_s * rate_bps(0.5, 1e-9, 0.1, p);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, half_served), {1, 1});

  OracleResult r = best_service_fraction(inst);
  REQUIRE(!r.refused);
  CHECK(r.gamma_star == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.dual_gap <= 1e-5);
  CHECK(r.w(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.w(1, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("service oracle: separate slots beat the contested one") {
  // Both users need one full-band slot's worth; the only way is one each.
  Mat gains(2, 2);
  gains << 1e-9, 1e-9, 1e-9, 1e-9;
  SystemParams p = lab_params(2);
  const double full = p.slot_s * rate_bps(1, 1e-9, 0.1, p);
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.999 * full), {1, 1});

  OracleResult r = best_service_fraction(inst);
  REQUIRE(!r.refused);
  CHECK(r.feasible);
  CHECK(r.gamma_star >= 1.0 - 1e-9);
  // one slot per user
  CHECK(r.x.row(0).sum() == 1.0);
  CHECK(r.x.row(1).sum() == 1.0);
  CHECK(r.x.colwise().sum().maxCoeff() == 1.0);
}

TEST_CASE("service oracle refuses oversized enumerations") {
  {
    Mat gains = Mat::Constant(2, 20, 1e-9);
    ProblemInstance inst = shared_band(gains, Vec::Constant(2, 1e5), {10, 10});
    OracleOptions opt;
    opt.candidate_cap = 1 << 20;
    OracleResult r = best_service_fraction(inst, opt);
    CHECK(r.refused);
  }
  {
    Mat gains = Mat::Constant(1, 32, 1e-9);
    ProblemInstance inst = shared_band(gains, Vec::Constant(1, 1e5), {1});
    CHECK(best_service_fraction(inst).refused);
  }
}

TEST_CASE("service oracle: demander with no slot budget cannot be served") {
  Mat gains(1, 2);
  gains << 1e-9, 1e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(1, 1e3), {0});
  OracleResult r = best_service_fraction(inst);
  CHECK(!r.refused);
  CHECK(!r.feasible);
  CHECK(r.gamma_star == 0.0);
}

TEST_CASE("service oracle: no demand is trivially feasible") {
  Mat gains(1, 2);
  gains << 1e-9, 1e-9;
  ProblemInstance inst = shared_band(gains, Vec::Zero(1), {1});
  OracleResult r = best_service_fraction(inst);
  CHECK(r.feasible);
  CHECK(r.gamma_star == kInfD);
}

TEST_CASE("minimal horizon, shared band: single user needs ceil of demand") {
  SystemParams p = lab_params(8);
  const double full = p.slot_s * rate_bps(1, 1e-9, 0.1, p);
  Mat gains = Mat::Constant(1, 8, 1e-9);
  Vec demand(1);
  demand << 2.5 * full; // needs three slots
  ProblemInstance inst = shared_band(gains, demand, {8});

  OracleResult r = min_horizon_shared_band(inst, 8);
  REQUIRE(!r.refused);
  REQUIRE(r.feasible);
  CHECK(r.t_star == 3);
}

TEST_CASE("minimal horizon, shared band: contention forces a second slot") {
  SystemParams p = lab_params(4);
  const double full = p.slot_s * rate_bps(1, 1e-9, 0.1, p);
  Mat gains(2, 4);
  gains.row(0) << 1e-9, 0.0, 0.0, 0.0; // user 0 only ever sees slot 0
  gains.row(1) << 1e-9, 1e-9, 1e-9, 1e-9;
  ProblemInstance inst = shared_band(gains, Vec::Constant(2, 0.999 * full), {1, 1});

  OracleResult r = min_horizon_shared_band(inst, 4);
  REQUIRE(!r.refused);
  REQUIRE(r.feasible);
  CHECK(r.t_star == 2);
  CHECK(r.x(0, 0) == 1.0); // the only slot user 0 can use
}

TEST_CASE("minimal horizon, fixed rate: slot counts add up") {
  // R and tau chosen so demands of 2R*tau and 1R*tau need 2 and 1 slots.
  const double R = 8e7;
  SystemParams p = lab_params(6);
  Mat powers = Mat::Constant(2, 6, 0.01);
  Vec demands(2);
  demands << 2 * R * p.slot_s, 1 * R * p.slot_s;
  Vec budgets = Vec::Constant(2, 1.0); // plenty: slot costs 5e-5 J
  ProblemInstance inst = fixed_rate(powers, demands, budgets, R);

  OracleResult r = min_horizon_fixed_rate(inst, 6);
  REQUIRE(!r.refused);
  REQUIRE(r.feasible);
  CHECK(r.t_star == 3);
  CHECK(r.x.sum() == 3.0);
  CHECK(r.x.colwise().sum().maxCoeff() <= 1.0);
}

TEST_CASE("minimal horizon, fixed rate: backtracking respects reachability") {
  const double R = 8e7;
  SystemParams p = lab_params(6);
  const double inf = std::numeric_limits<double>::infinity();
  Mat powers(2, 6);
  powers.row(0) << 0.01, 0.01, inf, inf, inf, inf; // user 0: slots 0 and 1 only
  powers.row(1) << 0.01, 0.01, 0.01, 0.01, 0.01, 0.01;
  Vec demands = Vec::Constant(2, 2 * R * p.slot_s); // two slots each
  ProblemInstance inst = fixed_rate(powers, demands, Vec::Constant(2, 1.0), R);

  OracleResult r = min_horizon_fixed_rate(inst, 6);
  REQUIRE(r.feasible);
  CHECK(r.t_star == 4);
  CHECK(r.x(0, 0) == 1.0);
  CHECK(r.x(0, 1) == 1.0);
}

TEST_CASE("minimal horizon, fixed rate: energy budget binds exactly") {
  const double R = 8e7;
  SystemParams p = lab_params(4);
  Mat powers = Mat::Constant(1, 4, 0.1);
  Vec demands(1);
  demands << 2 * R * p.slot_s;
  const double per_slot = 0.1 * p.slot_s;

  ProblemInstance exact = fixed_rate(powers, demands, Vec::Constant(1, 2 * per_slot), R);
  OracleResult ok = min_horizon_fixed_rate(exact, 4);
  CHECK(ok.feasible);
  CHECK(ok.t_star == 2);

  ProblemInstance tight = fixed_rate(powers, demands, Vec::Constant(1, 1.9 * per_slot), R);
  OracleResult bad = min_horizon_fixed_rate(tight, 4);
  CHECK(!bad.feasible);
}

TEST_CASE("minimal horizon, fixed rate: zero demand needs no slots") {
  const double R = 8e7;
  Mat powers = Mat::Constant(1, 4, 0.01);
  ProblemInstance inst = fixed_rate(powers, Vec::Zero(1), Vec::Constant(1, 1.0), R);
  OracleResult r = min_horizon_fixed_rate(inst, 4);
  CHECK(r.feasible);
  CHECK(r.t_star == 0);
}

TEST_CASE("minimal horizon, fixed rate: node budget refusal") {
  const double R = 8e7;
  SystemParams p = lab_params(12);
  Mat powers = Mat::Constant(3, 12, 0.01);
  Vec demands = Vec::Constant(3, 4 * R * p.slot_s);
  ProblemInstance inst = fixed_rate(powers, demands, Vec::Constant(3, 1.0), R);

  OracleOptions strict;
  strict.node_cap = 5;
  CHECK(min_horizon_fixed_rate(inst, 12, strict).refused);
  CHECK(!min_horizon_fixed_rate(inst, 12).refused);
}

TEST_CASE("rounding marginal estimates converge to the fractional values") {
  Mat y(2, 2);
  y << 0.25, 0.5, 0.5, 0.75;
  Mat freq = rounding_marginals_mc(y, 20000, 2718);
  for (int m = 0; m < 2; ++m)
    for (int t = 0; t < 2; ++t) CHECK(std::abs(freq(m, t) - y(m, t)) <= 0.02);

  Mat again = rounding_marginals_mc(y, 500, 2718);
  Mat once_more = rounding_marginals_mc(y, 500, 2718);
  CHECK((again - once_more).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(rounding_marginals_mc(y, 0, 1));
}
