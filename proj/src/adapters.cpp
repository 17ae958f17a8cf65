#include "fedsched/adapters.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "fedsched/subsolve.hpp"

namespace fedsched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// --- bandwidth-sharing client -----------------------------------------------

class BandwidthClient final : public ClientProblem {
public:
  BandwidthClient(int m, const BandwidthLayout& lay, const UserBandwidthData& u,
                  const SystemParams& params, bool gamma_scales_energy,
                  std::optional<double> remaining_cap)
      : m_(m), lay_(lay), gamma_scales_energy_(gamma_scales_energy),
        remaining_cap_(remaining_cap), bandwidth_(params.bandwidth_hz) {
    const double noise_floor = params.noise_w_hz * params.bandwidth_hz;
    snr_coef_.resize(lay_.horizon);
    for (int t = 0; t < lay_.horizon; ++t)
      snr_coef_(t) = u.tx_power_w * std::max(u.gains(t), 0.0) / noise_floor;
    demand_scale_ = u.demand_bits > 0 ? params.slot_s / u.demand_bits : 0.0;
    n_cap_ = u.energy_slots;
    energy_scale_ = std::max(1.0, static_cast<double>(n_cap_));
  }

  int dim() const override { return lay_.dim(); }
  int rows() const override { return remaining_cap_ ? 3 : 2; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(rows());
    if (demand_scale_ > 0) {
      double served = 0;
      for (int t = 0; t < lay_.horizon; ++t)
        served += rate_concave_term(phi(lay_.w(m_, t)), snr_coef_(t), bandwidth_).value;
      c(0) = phi(lay_.gamma()) - served * demand_scale_;
    } else {
      c(0) = -1.0; // no demand, row permanently slack
    }
    double slots = 0;
    for (int t = 0; t < lay_.horizon; ++t) slots += phi(lay_.x(m_, t));
    const double gamma_factor = gamma_scales_energy_ ? phi(lay_.gamma()) : 1.0;
    c(1) = (slots - gamma_factor * n_cap_) / energy_scale_;
    if (remaining_cap_) c(2) = (slots - *remaining_cap_) / energy_scale_;
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    if (demand_scale_ > 0 && weights(0) != 0) {
      for (int t = 0; t < lay_.horizon; ++t) {
        const RateTerm r = rate_concave_term(phi(lay_.w(m_, t)), snr_coef_(t), bandwidth_);
        grad(lay_.w(m_, t)) -= weights(0) * demand_scale_ * r.dvalue;
      }
      grad(lay_.gamma()) += weights(0);
    }
    double row_x = weights(1) / energy_scale_;
    if (remaining_cap_) row_x += weights(2) / energy_scale_;
    if (row_x != 0)
      for (int t = 0; t < lay_.horizon; ++t) grad(lay_.x(m_, t)) += row_x;
    if (gamma_scales_energy_ && weights(1) != 0)
      grad(lay_.gamma()) -= weights(1) * n_cap_ / energy_scale_;
  }

private:
  int m_;
  BandwidthLayout lay_;
  bool gamma_scales_energy_;
  std::optional<double> remaining_cap_;
  double bandwidth_;
  Vec snr_coef_;
  double demand_scale_ = 0;
  int n_cap_ = 0;
  double energy_scale_ = 1;
};

class BandwidthCoordinator final : public CoordinatorProblem {
public:
  BandwidthCoordinator(const BandwidthLayout& lay, double gamma_cap)
      : lay_(lay), gamma_cap_(gamma_cap) {}

  int dim() const override { return lay_.dim(); }
  int rows() const override { return lay_.horizon + lay_.n * lay_.horizon; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(rows());
    for (int t = 0; t < lay_.horizon; ++t) {
      double s = 0;
      for (int m = 0; m < lay_.n; ++m) s += phi(lay_.w(m, t));
      c(t) = s - 1.0;
    }
    int r = lay_.horizon;
    for (int m = 0; m < lay_.n; ++m)
      for (int t = 0; t < lay_.horizon; ++t, ++r)
        c(r) = phi(lay_.w(m, t)) - phi(lay_.x(m, t));
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    (void)phi;
    for (int t = 0; t < lay_.horizon; ++t)
      if (weights(t) != 0)
        for (int m = 0; m < lay_.n; ++m) grad(lay_.w(m, t)) += weights(t);
    int r = lay_.horizon;
    for (int m = 0; m < lay_.n; ++m)
      for (int t = 0; t < lay_.horizon; ++t, ++r) {
        grad(lay_.w(m, t)) += weights(r);
        grad(lay_.x(m, t)) -= weights(r);
      }
  }

  double objective_smooth(const Vec& phi, Vec* grad) const override {
    if (grad) {
      grad->setZero();
      (*grad)(lay_.gamma()) = -1.0;
    }
    return -phi(lay_.gamma());
  }

  void box(Vec& lower, Vec& upper) const override {
    lower.setZero();
    upper.setOnes();
    upper(lay_.gamma()) = gamma_cap_;
  }

private:
  BandwidthLayout lay_;
  double gamma_cap_;
};

// --- share re-optimization at fixed slots ------------------------------------

struct ReoptLayout {
  int n = 0, horizon = 0;
  int w(int m, int t) const { return m * horizon + t; }
  int gamma() const { return n * horizon; }
  int dim() const { return n * horizon + 1; }
};

class ReoptClient final : public ClientProblem {
public:
  ReoptClient(int m, const ReoptLayout& lay, const UserBandwidthData& u,
              const SystemParams& params)
      : m_(m), lay_(lay), bandwidth_(params.bandwidth_hz) {
    const double noise_floor = params.noise_w_hz * params.bandwidth_hz;
    snr_coef_.resize(lay_.horizon);
    for (int t = 0; t < lay_.horizon; ++t)
      snr_coef_(t) = u.tx_power_w * std::max(u.gains(t), 0.0) / noise_floor;
    demand_scale_ = u.demand_bits > 0 ? params.slot_s / u.demand_bits : 0.0;
  }

  int dim() const override { return lay_.dim(); }
  int rows() const override { return 1; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(1);
    if (demand_scale_ <= 0) {
      c(0) = -1.0;
      return;
    }
    double served = 0;
    for (int t = 0; t < lay_.horizon; ++t)
      served += rate_concave_term(phi(lay_.w(m_, t)), snr_coef_(t), bandwidth_).value;
    c(0) = phi(lay_.gamma()) - served * demand_scale_;
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    if (demand_scale_ <= 0 || weights(0) == 0) return;
    for (int t = 0; t < lay_.horizon; ++t) {
      const RateTerm r = rate_concave_term(phi(lay_.w(m_, t)), snr_coef_(t), bandwidth_);
      grad(lay_.w(m_, t)) -= weights(0) * demand_scale_ * r.dvalue;
    }
    grad(lay_.gamma()) += weights(0);
  }

private:
  int m_;
  ReoptLayout lay_;
  double bandwidth_;
  Vec snr_coef_;
  double demand_scale_ = 0;
};

class ReoptCoordinator final : public CoordinatorProblem {
public:
  ReoptCoordinator(const ReoptLayout& lay, Mat x_fixed, double gamma_cap)
      : lay_(lay), x_fixed_(std::move(x_fixed)), gamma_cap_(gamma_cap) {}

  int dim() const override { return lay_.dim(); }
  int rows() const override { return lay_.horizon; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(lay_.horizon);
    for (int t = 0; t < lay_.horizon; ++t) {
      double s = 0;
      for (int m = 0; m < lay_.n; ++m) s += phi(lay_.w(m, t));
      c(t) = s - 1.0;
    }
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    (void)phi;
    for (int t = 0; t < lay_.horizon; ++t)
      if (weights(t) != 0)
        for (int m = 0; m < lay_.n; ++m) grad(lay_.w(m, t)) += weights(t);
  }

  double objective_smooth(const Vec& phi, Vec* grad) const override {
    if (grad) {
      grad->setZero();
      (*grad)(lay_.gamma()) = -1.0;
    }
    return -phi(lay_.gamma());
  }

  void box(Vec& lower, Vec& upper) const override {
    lower.setZero();
    for (int m = 0; m < lay_.n; ++m)
      for (int t = 0; t < lay_.horizon; ++t)
        upper(lay_.w(m, t)) = std::max(0.0, std::min(1.0, x_fixed_(m, t)));
    upper(lay_.gamma()) = gamma_cap_;
  }

private:
  ReoptLayout lay_;
  Mat x_fixed_;
  double gamma_cap_;
};

// --- fixed-rate slot assignment ----------------------------------------------

class FixedRateClient final : public ClientProblem {
public:
  FixedRateClient(int m, const FixedRateLayout& lay, const UserFixedRateData& u,
                  const SystemParams& params)
      : m_(m), lay_(lay) {
    cost_.resize(lay_.horizon);
    const double budget = u.energy_budget_j;
    for (int t = 0; t < lay_.horizon; ++t) {
      const double spent = u.slot_power_w(t) * params.slot_s;
      double frac = budget > 0 ? spent / budget : (spent > 0 ? kInf : 0.0);
      cost_(t) = std::min(frac, kSlotCostCap);
    }
    need_ = slots_needed(u.demand_bits, params);
  }

  int dim() const override { return lay_.dim(); }
  int rows() const override { return 2; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(2);
    double spent = 0, slots = 0;
    for (int t = 0; t < lay_.horizon; ++t) {
      spent += cost_(t) * phi(lay_.x(m_, t));
      slots += phi(lay_.x(m_, t));
    }
    c(0) = spent - 1.0;
    c(1) = need_ > 0 ? (need_ - slots) / need_ : -1.0;
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    (void)phi;
    for (int t = 0; t < lay_.horizon; ++t) {
      grad(lay_.x(m_, t)) += weights(0) * cost_(t);
      if (need_ > 0) grad(lay_.x(m_, t)) -= weights(1) / need_;
    }
  }

  const Vec& slot_cost() const { return cost_; }
  int need() const { return need_; }

private:
  int m_;
  FixedRateLayout lay_;
  Vec cost_;
  int need_ = 0;
};

class FixedRateCoordinator final : public CoordinatorProblem {
public:
  explicit FixedRateCoordinator(const FixedRateLayout& lay) : lay_(lay) {}

  int dim() const override { return lay_.dim(); }
  int rows() const override { return lay_.horizon; }

  void constraints(const Vec& phi, Vec& c) const override {
    c.resize(lay_.horizon);
    for (int t = 0; t < lay_.horizon; ++t) {
      double s = 0;
      for (int m = 0; m < lay_.n; ++m) s += phi(lay_.x(m, t));
      c(t) = s - 1.0;
    }
  }

  void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const override {
    (void)phi;
    for (int t = 0; t < lay_.horizon; ++t)
      if (weights(t) != 0)
        for (int m = 0; m < lay_.n; ++m) grad(lay_.x(m, t)) += weights(t);
  }

  void box(Vec& lower, Vec& upper) const override {
    lower.setZero();
    upper.setOnes();
  }

private:
  FixedRateLayout lay_;
};

} // namespace

FedSetup make_bandwidth_setup(const ProblemInstance& inst,
                              const std::optional<std::vector<double>>& remaining_slots) {
  inst.validate();
  if (inst.variant == Variant::kFixedRate)
    throw std::invalid_argument("bandwidth setup needs a bandwidth-sharing instance");
  const bool block = inst.variant == Variant::kBlockShare;

  FedSetup setup;
  setup.bw_layout = {inst.n_users(), inst.params.horizon};
  const BandwidthLayout& lay = setup.bw_layout;
  setup.coordinator = std::make_shared<BandwidthCoordinator>(lay, block ? 1.0 : kInf);
  for (int m = 0; m < lay.n; ++m) {
    std::optional<double> cap;
    if (remaining_slots) cap = (*remaining_slots)[m];
    setup.clients.emplace_back(
        m, std::make_shared<BandwidthClient>(m, lay, inst.bw_users[m], inst.params, block, cap));
  }

  setup.phi0 = Vec::Zero(lay.dim());
  const double w0 = 1.0 / std::max(1, lay.n);
  for (int m = 0; m < lay.n; ++m)
    for (int t = 0; t < lay.horizon; ++t) {
      setup.phi0(lay.x(m, t)) = 0.5;
      setup.phi0(lay.w(m, t)) = w0;
    }
  setup.phi0(lay.gamma()) = 0.5;
  return setup;
}

FedSetup make_reopt_setup(const ProblemInstance& inst, const Mat& x_fixed, double gamma_cap) {
  inst.validate();
  if (inst.variant == Variant::kFixedRate)
    throw std::invalid_argument("share re-optimization needs a bandwidth-sharing instance");
  if (x_fixed.rows() != inst.n_users() || x_fixed.cols() != inst.params.horizon)
    throw std::invalid_argument("fixed slot matrix has wrong dimensions");
  if (!(gamma_cap > 0)) throw std::invalid_argument("gamma cap must be positive");

  ReoptLayout lay{inst.n_users(), inst.params.horizon};
  FedSetup setup;
  setup.bw_layout = {inst.n_users(), inst.params.horizon}; // w block shares indexing
  if (inst.variant == Variant::kBlockShare) gamma_cap = std::min(gamma_cap, 1.0);
  setup.coordinator = std::make_shared<ReoptCoordinator>(lay, x_fixed, gamma_cap);
  for (int m = 0; m < lay.n; ++m)
    setup.clients.emplace_back(
        m, std::make_shared<ReoptClient>(m, lay, inst.bw_users[m], inst.params));

  setup.phi0 = Vec::Zero(lay.dim());
  for (int t = 0; t < lay.horizon; ++t) {
    const double col = x_fixed.col(t).sum();
    const double scale = col > 1.0 ? 1.0 / col : 1.0;
    for (int m = 0; m < lay.n; ++m) setup.phi0(lay.w(m, t)) = x_fixed(m, t) * scale;
  }
  setup.phi0(lay.gamma()) = std::min(0.5, gamma_cap);
  return setup;
}

FedSetup make_fixed_rate_setup(const ProblemInstance& inst) {
  inst.validate();
  if (inst.variant != Variant::kFixedRate)
    throw std::invalid_argument("fixed-rate setup needs a fixed-rate instance");

  FedSetup setup;
  setup.fr_layout = {inst.n_users(), inst.params.horizon};
  const FixedRateLayout& lay = setup.fr_layout;
  setup.coordinator = std::make_shared<FixedRateCoordinator>(lay);
  for (int m = 0; m < lay.n; ++m)
    setup.clients.emplace_back(
        m, std::make_shared<FixedRateClient>(m, lay, inst.fr_users[m], inst.params));
  setup.phi0 = Vec::Constant(lay.dim(), 0.5);
  return setup;
}

double served_fraction(const UserBandwidthData& u, const SystemParams& params,
                       const Vec& w_row) {
  if (u.demand_bits <= 0) return kInf;
  double bits = 0;
  for (int t = 0; t < w_row.size(); ++t)
    bits += rate_bps(w_row(t), u.gains(t), u.tx_power_w, params) * params.slot_s;
  return bits / u.demand_bits;
}

double energy_fraction(const UserFixedRateData& u, const SystemParams& params,
                       const Vec& x_row) {
  double spent = 0;
  for (int t = 0; t < x_row.size(); ++t)
    if (x_row(t) > 0) spent += u.slot_power_w(t) * x_row(t) * params.slot_s;
  if (u.energy_budget_j <= 0) return spent > 0 ? kInf : 0.0;
  return spent / u.energy_budget_j;
}

double min_served_fraction(const ProblemInstance& inst, const Mat& w,
                           double bandwidth_hz, MessageLog* tap) {
  SystemParams eff = inst.params;
  eff.bandwidth_hz = bandwidth_hz;
  double worst = kInf;
  for (int m = 0; m < inst.n_users(); ++m) {
    const double frac = served_fraction(inst.bw_users[m], eff, w.row(m).transpose());
    if (tap) {
      ClientReport r;
      r.client_id = m;
      r.kind = "served_fraction";
      r.value = frac;
      tap->record(std::move(r));
    }
    worst = std::min(worst, frac);
  }
  return worst;
}

double clamped_share_mass(const Mat& w) {
  double mass = 0;
  for (int m = 0; m < w.rows(); ++m)
    for (int t = 0; t < w.cols(); ++t)
      if (w(m, t) > 0 && w(m, t) <= kShareFloor) mass += w(m, t);
  return mass;
}

} // namespace fedsched
