#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedsched/model.hpp"

using namespace fedsched;

namespace {

SystemParams unit_params() {
  SystemParams p;
  p.bandwidth_hz = 1.0;
  p.noise_w_hz = 1.0;
  p.slot_s = 1.0;
  p.horizon = 1;
  return p;
}

SystemParams table_params() {
  SystemParams p; // defaults carry the reference configuration
  p.fixed_rate_bps = 80e6;
  return p;
}

} // namespace

TEST_CASE("rate value and limits") {
  SystemParams p = unit_params();
  // snr coefficient a = power*gain/(noise*bandwidth) = 3
  CHECK(rate_bps(0.5, 3.0, 1.0, p) == doctest::Approx(1.403677461028802).epsilon(1e-12));
  CHECK(rate_bps(0.0, 3.0, 1.0, p) == 0.0);
  CHECK(rate_bps(0.5, 0.0, 1.0, p) == 0.0);
  CHECK(rate_bps(-0.1, 3.0, 1.0, p) == 0.0);

  // increasing in the share, concave in the share
  double prev = 0;
  for (double w = 0.05; w <= 1.0; w += 0.05) {
    const double r = rate_bps(w, 3.0, 1.0, p);
    CHECK(r > prev);
    prev = r;
  }
  for (double w = 0.1; w <= 0.8; w += 0.1) {
    const double mid = rate_bps(w + 0.05, 3.0, 1.0, p);
    const double avg = 0.5 * (rate_bps(w, 3.0, 1.0, p) + rate_bps(w + 0.1, 3.0, 1.0, p));
    CHECK(mid >= avg);
  }
}

TEST_CASE("power needed for the fixed rate") {
  SystemParams p = table_params();
  CHECK(required_power_w(1e-10, p) == doctest::Approx(0.16949136795413322).epsilon(1e-10));
  CHECK(std::isinf(required_power_w(0.0, p)));
  CHECK(required_power_w(2e-10, p) == doctest::Approx(0.16949136795413322 / 2).epsilon(1e-10));
}

TEST_CASE("slot counting helpers") {
  SystemParams p = table_params();
  CHECK(slots_needed(1.6e6, p) == 4);
  CHECK(slots_needed(0.0, p) == 0);
  CHECK(slots_needed(80e6 * 5e-3 * 3, p) == 3);          // exact boundary
  CHECK(slots_needed(80e6 * 5e-3 * 3 + 1.0, p) == 4);    // one bit over
  CHECK(energy_slot_cap(0.040, 0.1, 5e-3) == 80);
  CHECK(energy_slot_cap(0.0, 0.1, 5e-3) == 0);
  CHECK(energy_slot_cap(0.9e-3, 0.1, 5e-3) == 1);
}

TEST_CASE("validation rejects malformed instances") {
  ProblemInstance inst;
  inst.variant = Variant::kBandwidthShare;
  inst.params = unit_params();
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument); // no users

  UserBandwidthData u;
  u.demand_bits = 10;
  u.tx_power_w = 1;
  u.energy_slots = 1;
  u.gains = Vec::Constant(2, 1.0); // wrong length for horizon 1
  inst.bw_users.push_back(u);
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst.bw_users[0].gains = Vec::Constant(1, 1.0);
  CHECK_NOTHROW(inst.validate());
}

TEST_CASE("fixed-rate constraint evaluation") {
  ProblemInstance inst;
  inst.variant = Variant::kFixedRate;
  inst.params = table_params();
  inst.params.horizon = 1;
  UserFixedRateData u;
  u.demand_bits = 80e6 * 5e-3; // exactly one slot
  u.energy_budget_j = 0.1 * 5e-3;
  u.slot_power_w = Vec::Constant(1, 0.1); // burning exactly the budget
  inst.fr_users.push_back(u);

  Schedule s;
  s.x = Mat::Constant(1, 1, 1.0);
  const ViolationReport rep = eval_constraints(inst, s);
  CHECK(rep.satisfied);
  CHECK(rep.find("energy")->relative == 0.0);
  CHECK(rep.find("demand")->relative == 0.0);
  CHECK(rep.find("slot")->relative == 0.0);

  // Idle schedule misses the demand by the full slot.
  s.x.setZero();
  const ViolationReport idle = eval_constraints(inst, s);
  CHECK(!idle.satisfied);
  CHECK(idle.find("demand")->relative == doctest::Approx(1.0));

  // Over budget: second user shares the slot, slot constraint trips.
  inst.fr_users.push_back(u);
  Schedule both;
  both.x = Mat::Constant(2, 1, 1.0);
  const ViolationReport clash = eval_constraints(inst, both);
  CHECK(clash.find("slot")->relative == doctest::Approx(1.0));
  CHECK(!clash.satisfied);

  // Boosted budgets lift the energy family.
  inst.fr_users.pop_back();
  inst.fr_users[0].energy_budget_j /= 2; // now the single slot overruns 2x
  Schedule boosted;
  boosted.x = Mat::Constant(1, 1, 1.0);
  const ViolationReport over = eval_constraints(inst, boosted);
  CHECK(over.find("energy")->relative == doctest::Approx(1.0));
  boosted.boosted_energy_j = Vec::Constant(1, 0.1 * 5e-3);
  const ViolationReport fixed = eval_constraints(inst, boosted);
  CHECK(fixed.find("energy")->relative == 0.0);
}

TEST_CASE("bandwidth-sharing constraint evaluation") {
  ProblemInstance inst;
  inst.variant = Variant::kBandwidthShare;
  inst.params = unit_params();
  inst.params.horizon = 2;
  UserBandwidthData u;
  u.demand_bits = 1.0;
  u.tx_power_w = 1.0;
  u.energy_slots = 1;
  u.gains = Vec::Constant(2, 3.0);
  inst.bw_users.push_back(u);
  inst.bw_users.push_back(u);

  Schedule s;
  s.x = Mat::Zero(2, 2);
  s.w = Mat::Zero(2, 2);
  s.x(0, 0) = 1;
  s.x(1, 1) = 1;
  s.w(0, 0) = 1;
  s.w(1, 1) = 1;
  // each user gets one full slot: served = log2(1+3) = 2 bits >= 1
  const ViolationReport rep = eval_constraints(inst, s);
  CHECK(rep.satisfied);

  // bandwidth column over 1
  s.w(1, 0) = 0.5;
  const ViolationReport over = eval_constraints(inst, s);
  CHECK(over.find("bandwidth")->relative == doctest::Approx(0.5));
  CHECK(over.find("coupling")->relative == doctest::Approx(0.5)); // w=0.5 > x=0

  // slot budget: user 0 active twice with cap 1
  s.w(1, 0) = 0;
  s.x(0, 1) = 1;
  const ViolationReport energy = eval_constraints(inst, s);
  CHECK(energy.find("energy")->relative == doctest::Approx(1.0));

  // demand shortfall reported relative to the target
  s.x(0, 1) = 0;
  inst.bw_users[0].demand_bits = 4.0; // served 2 of 4
  const ViolationReport demand = eval_constraints(inst, s);
  CHECK(demand.find("demand")->relative == doctest::Approx(0.5));
  CHECK(demand.find("demand")->worst_index == 0);

  // a bandwidth boost closes the gap (2x band, noise floor scales too)
  Schedule boosted = s;
  boosted.boosted_bandwidth_hz = 2.0;
  const ViolationReport after = eval_constraints(inst, boosted);
  // served = 2*log2(1 + 3/2) per full slot = 2.644 < 4 still short but less
  CHECK(after.find("demand")->relative < demand.find("demand")->relative);

  Schedule wrong;
  wrong.x = Mat::Zero(1, 2);
  wrong.w = Mat::Zero(1, 2);
  CHECK_THROWS_AS(eval_constraints(inst, wrong), std::invalid_argument);
}

TEST_CASE("block variant scales targets by the service fraction") {
  ProblemInstance inst;
  inst.variant = Variant::kBlockShare;
  inst.params = unit_params();
  inst.params.horizon = 2;
  inst.params.block_slots = 2;
  inst.gamma_fraction = 0.5;
  UserBandwidthData u;
  u.demand_bits = 4.0;
  u.tx_power_w = 1.0;
  u.energy_slots = 2;
  u.gains = Vec::Constant(2, 3.0);
  inst.bw_users.push_back(u);

  Schedule s;
  s.x = Mat::Zero(1, 2);
  s.w = Mat::Zero(1, 2);
  s.x(0, 0) = 1;
  s.w(0, 0) = 1;
  // served 2 bits = gamma * demand; slots used 1 = gamma * 2
  const ViolationReport rep = eval_constraints(inst, s);
  CHECK(rep.satisfied);

  inst.gamma_fraction = 1.0;
  const ViolationReport strict = eval_constraints(inst, s);
  CHECK(strict.find("demand")->relative == doctest::Approx(0.5));
}

TEST_CASE("integrality family flags fractional slot entries") {
  ProblemInstance inst;
  inst.variant = Variant::kBandwidthShare;
  inst.params = unit_params();
  UserBandwidthData u;
  u.demand_bits = 0;
  u.tx_power_w = 1;
  u.energy_slots = 1;
  u.gains = Vec::Constant(1, 1.0);
  inst.bw_users.push_back(u);

  Schedule s;
  s.x = Mat::Constant(1, 1, 0.4);
  s.w = Mat::Zero(1, 1);
  const ViolationReport rep = eval_constraints(inst, s);
  CHECK(rep.find("integrality")->relative == doctest::Approx(0.4));
  CHECK(!rep.satisfied);
}
