#include "fedsched/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedsched {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// gap / |rhs| with denominator 1 when rhs == 0.
double rel_gap(double gap, double rhs) {
  if (gap <= 0) return 0.0;
  const double denom = std::abs(rhs) > 0 ? std::abs(rhs) : 1.0;
  return gap / denom;
}

struct FamilyAccum {
  ConstraintViolation worst;
  bool touched = false;

  explicit FamilyAccum(std::string family) { worst.family = std::move(family); }

  void feed(double gap, double rhs, int index) {
    touched = true;
    const double rel = rel_gap(gap, rhs);
    if (rel > worst.relative || (rel == worst.relative && std::max(gap, 0.0) > worst.absolute)) {
      worst.relative = rel;
      worst.absolute = std::max(gap, 0.0);
      worst.worst_index = index;
    }
  }

  void flush(ViolationReport& r) const {
    if (touched) r.entries.push_back(worst);
  }
};

} // namespace

void SystemParams::validate() const {
  require(bandwidth_hz > 0, "bandwidth must be positive");
  require(noise_w_hz > 0, "noise PSD must be positive");
  require(slot_s > 0, "slot length must be positive");
  require(horizon > 0, "horizon must be positive");
  require(block_slots >= 0, "block length cannot be negative");
  require(block_slots <= horizon, "block length cannot exceed horizon");
  require(fixed_rate_bps >= 0, "fixed rate cannot be negative");
}

void ProblemInstance::validate() const {
  params.validate();
  require(gamma_fraction >= 0 && gamma_fraction <= 1, "service fraction must lie in [0,1]");
  if (variant == Variant::kFixedRate) {
    require(!fr_users.empty(), "fixed-rate instance needs users");
    require(bw_users.empty(), "fixed-rate instance cannot carry bandwidth users");
    require(params.fixed_rate_bps > 0, "fixed-rate instance needs a positive rate");
    for (const auto& u : fr_users) {
      require(u.demand_bits >= 0, "demand cannot be negative");
      require(u.energy_budget_j >= 0, "energy budget cannot be negative");
      require(u.slot_power_w.size() == params.horizon, "per-slot power length must match horizon");
    }
  } else {
    require(!bw_users.empty(), "bandwidth-sharing instance needs users");
    require(fr_users.empty(), "bandwidth-sharing instance cannot carry fixed-rate users");
    for (const auto& u : bw_users) {
      require(u.demand_bits >= 0, "demand cannot be negative");
      require(u.tx_power_w > 0, "transmit power must be positive");
      require(u.energy_slots >= 0, "slot budget cannot be negative");
      require(u.gains.size() == params.horizon, "gain trace length must match horizon");
    }
  }
}

double ViolationReport::max_relative() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.relative);
  return m;
}

const ConstraintViolation* ViolationReport::find(const std::string& family) const {
  for (const auto& e : entries)
    if (e.family == family) return &e;
  return nullptr;
}

double rate_bps(double w, double gain, double power_w, const SystemParams& p) {
  if (w <= 0 || gain <= 0) return 0.0;
  const double snr = power_w * gain / (p.noise_w_hz * p.bandwidth_hz * w);
  return p.bandwidth_hz * w * std::log1p(snr) / M_LN2;
}

double required_power_w(double gain, const SystemParams& p) {
  if (gain <= 0) return std::numeric_limits<double>::infinity();
  const double snr = std::exp2(p.fixed_rate_bps / p.bandwidth_hz) - 1.0;
  return snr * p.noise_w_hz * p.bandwidth_hz / gain;
}

int slots_needed(double demand_bits, const SystemParams& p) {
  if (demand_bits <= 0) return 0;
  require(p.fixed_rate_bps > 0, "slots_needed requires a positive fixed rate");
  const double v = demand_bits / (p.fixed_rate_bps * p.slot_s);
  return static_cast<int>(std::ceil(v - 1e-9));
}

int energy_slot_cap(double energy_j, double power_w, double slot_s) {
  require(power_w > 0 && slot_s > 0, "slot energy must be positive");
  if (energy_j <= 0) return 0;
  return static_cast<int>(std::floor(energy_j / (power_w * slot_s) + 1e-9));
}

ViolationReport eval_constraints(const ProblemInstance& inst, const Schedule& s, double tol) {
  inst.validate();
  const int n = inst.n_users();
  const int t = inst.params.horizon;
  require(s.x.rows() == n && s.x.cols() == t, "schedule x dimensions must match instance");

  ViolationReport report;
  report.tolerance = tol;

  FamilyAccum integrality("integrality");
  for (int m = 0; m < n; ++m)
    for (int j = 0; j < t; ++j) {
      const double d = std::abs(s.x(m, j) - std::round(s.x(m, j)));
      integrality.feed(d, 0.0, m);
    }

  if (inst.variant == Variant::kFixedRate) {
    FamilyAccum slot("slot"), energy("energy"), demand("demand");
    for (int j = 0; j < t; ++j) slot.feed(s.x.col(j).sum() - 1.0, 1.0, j);
    for (int m = 0; m < n; ++m) {
      const auto& u = inst.fr_users[m];
      double spent = 0;
      for (int j = 0; j < t; ++j)
        if (s.x(m, j) > 0) spent += u.slot_power_w(j) * s.x(m, j) * inst.params.slot_s;
      const double budget =
          s.boosted_energy_j.size() == n ? s.boosted_energy_j(m) : u.energy_budget_j;
      energy.feed(spent - budget, budget, m);
      const int need = slots_needed(u.demand_bits, inst.params);
      demand.feed(static_cast<double>(need) - s.x.row(m).sum(), static_cast<double>(need), m);
    }
    slot.flush(report);
    energy.flush(report);
    demand.flush(report);
  } else {
    require(s.w.rows() == n && s.w.cols() == t, "schedule w dimensions must match instance");
    SystemParams eff = inst.params;
    if (s.boosted_bandwidth_hz > 0) eff.bandwidth_hz = s.boosted_bandwidth_hz;
    const double gamma = inst.variant == Variant::kBlockShare ? inst.gamma_fraction : 1.0;

    FamilyAccum band("bandwidth"), coupling("coupling"), energy("energy"), demand("demand");
    for (int j = 0; j < t; ++j) band.feed(s.w.col(j).sum() - 1.0, 1.0, j);
    for (int m = 0; m < n; ++m) {
      const auto& u = inst.bw_users[m];
      for (int j = 0; j < t; ++j) coupling.feed(s.w(m, j) - s.x(m, j), s.x(m, j), m);
      energy.feed(s.x.row(m).sum() - gamma * u.energy_slots, gamma * u.energy_slots, m);
      double served = 0;
      for (int j = 0; j < t; ++j)
        served += rate_bps(s.w(m, j), u.gains(j), u.tx_power_w, eff) * eff.slot_s;
      demand.feed(gamma * u.demand_bits - served, gamma * u.demand_bits, m);
    }
    band.flush(report);
    coupling.flush(report);
    energy.flush(report);
    demand.flush(report);
  }

  integrality.flush(report);
  report.satisfied = report.max_relative() <= tol;
  return report;
}

ProblemInstance window_instance(const ProblemInstance& inst, int offset, int horizon) {
  if (offset < 0 || horizon <= 0 || offset + horizon > inst.params.horizon)
    throw std::invalid_argument("window outside the instance horizon");
  ProblemInstance out = inst;
  out.params.horizon = horizon;
  if (out.params.block_slots > horizon) out.params.block_slots = horizon;
  for (std::size_t m = 0; m < inst.bw_users.size(); ++m)
    out.bw_users[m].gains = inst.bw_users[m].gains.segment(offset, horizon).eval();
  for (std::size_t m = 0; m < inst.fr_users.size(); ++m)
    out.fr_users[m].slot_power_w = inst.fr_users[m].slot_power_w.segment(offset, horizon).eval();
  return out;
}

} // namespace fedsched
