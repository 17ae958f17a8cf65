#include "fedsched/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "fedsched/rounding.hpp"

namespace fedsched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Extra slots a pipeline may add beyond the minimal fractional horizon when
// every rounding draw at that horizon turns out unrepairable.
constexpr int kHorizonEscalation = 8;

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Timer {
  double t0 = now_s();
  double lap() {
    const double t1 = now_s();
    const double dt = t1 - t0;
    t0 = t1;
    return dt;
  }
};

// Clamps into [lo, hi] and returns the total mass moved.
double clamp_matrix(Mat& m, double lo, double hi) {
  double moved = 0;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      const double c = std::min(hi, std::max(lo, v));
      moved += std::abs(v - c);
      m(i, j) = c;
    }
  return moved;
}

void normalize_columns(Mat& w) {
  for (int t = 0; t < w.cols(); ++t) {
    const double s = w.col(t).sum();
    if (s > 1.0 + 1e-15) w.col(t) *= 1.0 / s;
  }
}

// Rescales slot rows above their budget.  Caps may be fractional (planned
// service fraction times the budget).
void rescale_rows(Mat& x, const std::vector<double>& caps) {
  for (int m = 0; m < x.rows(); ++m) {
    const double s = x.row(m).sum();
    if (s > caps[m] + 1e-12) x.row(m) *= caps[m] / s;
  }
}

// Drops scheduled slots (smallest fractional share first) until each row
// holds at most caps[m] slots.  Returns true if anything was dropped.
bool enforce_row_budget(Mat& x_int, const Mat& w_frac, const std::vector<int>& caps) {
  bool trimmed = false;
  for (int m = 0; m < x_int.rows(); ++m) {
    int count = 0;
    for (int t = 0; t < x_int.cols(); ++t) count += x_int(m, t) > 0.5 ? 1 : 0;
    while (count > caps[m]) {
      int drop = -1;
      double worst = kInf;
      for (int t = 0; t < x_int.cols(); ++t) {
        if (x_int(m, t) > 0.5 && w_frac(m, t) < worst) {
          worst = w_frac(m, t);
          drop = t;
        }
      }
      x_int(m, drop) = 0;
      --count;
      trimmed = true;
    }
  }
  return trimmed;
}

// One dependent-rounding draw on a fractional assignment.  In smart mode the
// edges are split by a federated two-component fit over `link_values`
// (log-domain link quality per user/slot).
Mat round_one_draw(const Mat& x_frac, RoundingMode mode, const Mat* link_values,
                   double theta, CounterRng rng) {
  RoundingGraph g = RoundingGraph::from_matrix(x_frac);
  if (mode == RoundingMode::kSmart) {
    std::vector<std::uint8_t> bits(g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e)
      bits[e] = (*link_values)(g.edges[e].user, g.edges[e].slot) >= theta ? 1 : 0;
    smart_dependent_round(g, bits, rng);
  } else {
    dependent_round(g, rng);
  }
  return g.to_matrix();
}

// Threshold for smart rounding, fit once per pipeline over the planning
// window.  Returns false when the mixture degenerates (single lobe); callers
// then fall back to simple rounding.
bool fit_link_threshold(const Mat& link_values, double* theta, MessageLog* tap) {
  std::vector<GainClient> clients;
  clients.reserve(link_values.rows());
  for (int m = 0; m < link_values.rows(); ++m)
    clients.emplace_back(m, Vec(link_values.row(m).transpose()));
  const GmmFit fit = fit_gmm_federated(clients, 50, 1e-8, tap);
  *theta = gaussian_intersection(fit);
  return !fit.degenerate;
}

Mat bandwidth_link_values(const ProblemInstance& inst) {
  const int n = inst.n_users();
  const int T = inst.params.horizon;
  Mat v(n, T);
  for (int m = 0; m < n; ++m)
    for (int t = 0; t < T; ++t)
      v(m, t) = std::log(std::max(inst.bw_users[m].gains(t), 1e-300));
  return v;
}

Mat fixed_rate_link_values(const ProblemInstance& inst) {
  const int n = inst.n_users();
  const int T = inst.params.horizon;
  Mat v(n, T);
  for (int m = 0; m < n; ++m)
    for (int t = 0; t < T; ++t) {
      const double p = inst.fr_users[m].slot_power_w(t);
      v(m, t) = -std::log(std::min(std::max(p, 1e-300), 1e300));
    }
  return v;
}

// Energy cost of slot t for fixed-rate user u, in budget units.
double slot_cost(const UserFixedRateData& u, const SystemParams& p, int t) {
  const double power = u.slot_power_w(t);
  if (!std::isfinite(power)) return kSlotCostCap;
  return std::min(power * p.slot_s / u.energy_budget_j, kSlotCostCap);
}

bool slot_usable(const UserFixedRateData& u, const SystemParams& p, int t) {
  return slot_cost(u, p, t) < kSlotCostCap * 0.999;
}

} // namespace

HorizonSearch search_min_horizon(
    const std::function<std::optional<FractionalSolution>(int)>& probe, int horizon_cap) {
  HorizonSearch out;
  if (horizon_cap <= 0) return out;

  // Doubling phase: find the first feasible horizon on 1, 2, 4, ...
  int lo = 0; // largest infeasible horizon seen
  int hi = -1;
  for (int t = 1;; t = std::min(t * 2, horizon_cap)) {
    ++out.probes;
    auto sol = probe(t);
    if (sol) {
      hi = t;
      out.solution = std::move(*sol);
      break;
    }
    lo = t;
    if (t == horizon_cap) return out; // infeasible even at the cap
  }

  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    ++out.probes;
    auto sol = probe(mid);
    if (sol) {
      hi = mid;
      out.solution = std::move(*sol);
    } else {
      lo = mid;
    }
  }
  out.found = true;
  out.horizon = hi;
  return out;
}

FractionalSolution solve_bandwidth_relaxation(
    const ProblemInstance& inst, const PipelineOptions& opt,
    const std::optional<std::vector<double>>& remaining_slots) {
  FedSetup setup = make_bandwidth_setup(inst, remaining_slots);
  FedResult fed = federated_solve(*setup.coordinator, setup.clients, opt.hyper,
                                  setup.phi0, opt.tap);
  const BandwidthLayout& lay = setup.bw_layout;

  FractionalSolution fs;
  fs.solver_converged = fed.converged;
  fs.outer_rounds = fed.outer_rounds;
  fs.gamma_solver = fed.phi(lay.gamma());

  fs.x.resize(lay.n, lay.horizon);
  fs.w.resize(lay.n, lay.horizon);
  for (int m = 0; m < lay.n; ++m)
    for (int t = 0; t < lay.horizon; ++t) {
      fs.x(m, t) = fed.phi(lay.x(m, t));
      fs.w(m, t) = fed.phi(lay.w(m, t));
    }

  double moved = clamp_matrix(fs.x, 0.0, 1.0) + clamp_matrix(fs.w, 0.0, 1.0);
  std::vector<double> caps(lay.n);
  for (int m = 0; m < lay.n; ++m) {
    caps[m] = inst.bw_users[m].energy_slots;
    if (remaining_slots) caps[m] = std::min(caps[m], (*remaining_slots)[m]);
  }
  rescale_rows(fs.x, caps);
  fs.w = fs.w.cwiseMin(fs.x);
  normalize_columns(fs.w);
  fs.repaired = moved > 1e-12;
  fs.clamped_mass = clamped_share_mass(fs.w);

  fs.gamma_exact = min_served_fraction(inst, fs.w, inst.params.bandwidth_hz, opt.tap);
  fs.feasible = fs.solver_converged && fs.gamma_exact >= 1.0 - opt.gamma_tol;
  return fs;
}

FractionalSolution solve_fixed_rate_relaxation(const ProblemInstance& inst,
                                               const PipelineOptions& opt,
                                               bool allow_energy_overdraft) {
  // Counting prechecks. A horizon that cannot possibly hold the demanded
  // slots (or pay for them) would otherwise send the solver chasing an
  // infeasible system until its iteration budget runs dry.
  {
    const int T = inst.params.horizon;
    int total_need = 0;
    for (const auto& u : inst.fr_users) {
      const int need = slots_needed(u.demand_bits, inst.params);
      total_need += need;
      int usable = 0;
      double cheapest_sum = 0;
      std::vector<double> costs;
      for (int t = 0; t < T; ++t)
        if (slot_usable(u, inst.params, t)) {
          ++usable;
          costs.push_back(slot_cost(u, inst.params, t));
        }
      if (need > usable) return {};
      std::sort(costs.begin(), costs.end());
      for (int i = 0; i < need; ++i) cheapest_sum += costs[i];
      if (!allow_energy_overdraft && cheapest_sum > 1.0 + 2.0 * opt.hyper.tol_multiplier)
        return {};
    }
    if (total_need > T) return {};
  }

  FedSetup setup = make_fixed_rate_setup(inst);
  FedResult fed = federated_solve(*setup.coordinator, setup.clients, opt.hyper,
                                  setup.phi0, opt.tap);
  const FixedRateLayout& lay = setup.fr_layout;

  FractionalSolution fs;
  fs.solver_converged = fed.converged;
  fs.outer_rounds = fed.outer_rounds;

  fs.x.resize(lay.n, lay.horizon);
  for (int m = 0; m < lay.n; ++m)
    for (int t = 0; t < lay.horizon; ++t) fs.x(m, t) = fed.phi(lay.x(m, t));
  double moved = clamp_matrix(fs.x, 0.0, 1.0);

  // Dead slots carry no useful mass.
  for (int m = 0; m < lay.n; ++m)
    for (int t = 0; t < lay.horizon; ++t)
      if (!slot_usable(inst.fr_users[m], inst.params, t)) {
        moved += fs.x(m, t);
        fs.x(m, t) = 0;
      }
  normalize_columns(fs.x);

  // Demand lift: push each short row back up to its slot requirement using
  // column headroom, cheapest slots first.
  std::vector<int> need(lay.n);
  Vec colsum = fs.x.colwise().sum();
  bool lift_ok = true;
  for (int m = 0; m < lay.n; ++m) {
    need[m] = slots_needed(inst.fr_users[m].demand_bits, inst.params);
    double deficit = need[m] - fs.x.row(m).sum();
    if (deficit <= 1e-9) continue;
    std::vector<int> order;
    for (int t = 0; t < lay.horizon; ++t)
      if (slot_usable(inst.fr_users[m], inst.params, t)) order.push_back(t);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double ca = slot_cost(inst.fr_users[m], inst.params, a);
      const double cb = slot_cost(inst.fr_users[m], inst.params, b);
      return ca != cb ? ca < cb : a < b;
    });
    for (int t : order) {
      if (deficit <= 1e-9) break;
      const double add =
          std::min({deficit, 1.0 - fs.x(m, t), std::max(0.0, 1.0 - colsum(t))});
      if (add <= 0) continue;
      fs.x(m, t) += add;
      colsum(t) += add;
      deficit -= add;
    }
    if (deficit > 1e-9) lift_ok = false;
  }

  if (!lift_ok) {
    // Greedy rebuild: heaviest demand first, each user takes its cheapest
    // still-free slots outright.
    fs.x.setZero();
    std::vector<char> taken(lay.horizon, 0);
    std::vector<int> users(lay.n);
    std::iota(users.begin(), users.end(), 0);
    std::sort(users.begin(), users.end(), [&](int a, int b) {
      return need[a] != need[b] ? need[a] > need[b] : a < b;
    });
    lift_ok = true;
    for (int m : users) {
      std::vector<int> order;
      for (int t = 0; t < lay.horizon; ++t)
        if (!taken[t] && slot_usable(inst.fr_users[m], inst.params, t)) order.push_back(t);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ca = slot_cost(inst.fr_users[m], inst.params, a);
        const double cb = slot_cost(inst.fr_users[m], inst.params, b);
        return ca != cb ? ca < cb : a < b;
      });
      if (static_cast<int>(order.size()) < need[m]) {
        lift_ok = false;
        break;
      }
      for (int k = 0; k < need[m]; ++k) {
        fs.x(m, order[k]) = 1.0;
        taken[order[k]] = 1;
      }
    }
    fs.repaired = true;
  }

  bool energy_ok = true;
  for (int m = 0; m < lay.n; ++m)
    if (energy_fraction(inst.fr_users[m], inst.params, Vec(fs.x.row(m).transpose())) >
        1.0 + 2.0 * opt.hyper.tol_multiplier)
      energy_ok = false;

  fs.repaired = fs.repaired || moved > 1e-12;
  double gamma = kInf;
  for (int m = 0; m < lay.n; ++m)
    if (inst.fr_users[m].demand_bits > 0)
      gamma = std::min(gamma, fs.x.row(m).sum() * inst.params.fixed_rate_bps *
                                  inst.params.slot_s / inst.fr_users[m].demand_bits);
  fs.gamma_exact = gamma;
  fs.feasible = lift_ok && energy_ok;
  return fs;
}

ReoptResult reoptimize_shares(const ProblemInstance& inst, const Mat& x_fixed,
                              const PipelineOptions& opt, const Mat* warm_shares,
                              double gamma_cap) {
  FedSetup setup = make_reopt_setup(inst, x_fixed, gamma_cap);
  const int n = inst.n_users();
  const int T = inst.params.horizon;
  if (warm_shares) {
    // Re-optimization iterate layout: shares first, service fraction last.
    for (int m = 0; m < n; ++m)
      for (int t = 0; t < T; ++t)
        setup.phi0(m * T + t) = std::min((*warm_shares)(m, t), x_fixed(m, t));
  }
  FedResult fed = federated_solve(*setup.coordinator, setup.clients, opt.hyper,
                                  setup.phi0, opt.tap);

  ReoptResult out;
  out.converged = fed.converged;
  out.outer_rounds = fed.outer_rounds;
  out.gamma_solver = fed.phi(n * T);
  out.w.resize(n, T);
  for (int m = 0; m < n; ++m)
    for (int t = 0; t < T; ++t)
      out.w(m, t) = std::min(std::max(fed.phi(m * T + t), 0.0), x_fixed(m, t));
  normalize_columns(out.w);
  out.gamma_exact = min_served_fraction(inst, out.w, inst.params.bandwidth_hz, opt.tap);
  return out;
}

BoostOutcome boost_bandwidth(const ProblemInstance& inst, const Mat& x_fixed,
                             const Mat& w_fixed, double gamma_target,
                             const PipelineOptions& opt) {
  BoostOutcome out;
  const double b0 = inst.params.bandwidth_hz;
  // The boosted plan must hit the target outright. Leaving a tolerance-sized
  // shortfall here would surface later as a phantom violation when the plan
  // is replayed on the very gains it was built from.
  const double need = gamma_target;
  Mat warm = w_fixed;

  auto probe = [&](double factor, Mat& w_out) -> double {
    ++out.solves;
    if (opt.reoptimize) {
      // Exact screen on the shares already in hand: when they serve the
      // target at this band, a re-solve cannot change the verdict.
      const double g_warm = min_served_fraction(inst, warm, b0 * factor, opt.tap);
      if (g_warm >= need) {
        w_out = warm;
        return g_warm;
      }
      ProblemInstance probe_inst = inst;
      probe_inst.params.bandwidth_hz = b0 * factor;
      // Capping the service variable at the target keeps the probe a cheap
      // feasibility check instead of an open-ended maximization.
      ReoptResult rr = reoptimize_shares(probe_inst, x_fixed, opt, &warm, need);
      warm = rr.w;
      w_out = rr.w;
      return rr.gamma_exact;
    }
    w_out = w_fixed;
    return min_served_fraction(inst, w_fixed, b0 * factor, opt.tap);
  };

  Mat w_base;
  const double g_base = probe(1.0, w_base);
  if (g_base >= need) {
    out.ok = true;
    out.bandwidth_hz = b0;
    out.w = std::move(w_base);
    out.gamma_exact = g_base;
    return out;
  }

  double hi = opt.boost_cap_factor;
  Mat w_hi;
  double g_hi = probe(hi, w_hi);
  if (g_hi < need) return out; // infeasible even at the cap

  double lo = 1.0;
  while (hi / lo > 1.0 + opt.boost_rel_precision) {
    const double mid = std::sqrt(lo * hi);
    Mat w_mid;
    const double g_mid = probe(mid, w_mid);
    if (g_mid >= need) {
      hi = mid;
      w_hi = std::move(w_mid);
      g_hi = g_mid;
    } else {
      lo = mid;
    }
  }
  out.ok = true;
  out.bandwidth_hz = b0 * hi;
  out.w = std::move(w_hi);
  out.gamma_exact = g_hi;
  return out;
}

Vec boost_energy(const ProblemInstance& inst, const Mat& x, MessageLog* tap) {
  const int n = inst.n_users();
  Vec boosted(n);
  for (int m = 0; m < n; ++m) {
    const UserFixedRateData& u = inst.fr_users[m];
    double spent = 0;
    for (int t = 0; t < inst.params.horizon; ++t)
      if (x(m, t) > 0.5) spent += u.slot_power_w(t) * inst.params.slot_s;
    boosted(m) = std::max(u.energy_budget_j, spent);
    if (MessageLog* log = tap_or_null(tap)) {
      ClientReport r;
      r.client_id = m;
      r.kind = "energy_boost";
      r.value = boosted(m) - u.energy_budget_j;
      log->record(r);
    }
  }
  return boosted;
}

ScheduleResult fair_point_schedule(const ProblemInstance& inst, const PipelineOptions& opt) {
  if (inst.variant != Variant::kBandwidthShare)
    throw std::invalid_argument("fair-point pipeline needs a bandwidth-sharing instance");
  inst.validate();
  opt.hyper.validate();

  ScheduleResult res;
  Timer total, stage;

  const int cap = std::min(opt.horizon_cap, inst.params.horizon);
  HorizonSearch hs = search_min_horizon(
      [&](int t) -> std::optional<FractionalSolution> {
        FractionalSolution fs = solve_bandwidth_relaxation(window_instance(inst, 0, t), opt);
        res.outer_rounds_total += fs.outer_rounds;
        if (!fs.feasible) return std::nullopt;
        return fs;
      },
      cap);
  if (!hs.found) {
    // No horizon within the window serves every demand at the base bandwidth.
    // The plan must still fit the period, so take the best service the full
    // window offers and let the boost step buy the missing capacity.
    FractionalSolution fs = solve_bandwidth_relaxation(window_instance(inst, 0, cap), opt);
    res.outer_rounds_total += fs.outer_rounds;
    hs.found = true;
    hs.horizon = cap;
    hs.solution = std::move(fs);
  }
  res.times.solve_s = stage.lap();

  res.fractional = std::move(hs.solution);

  CounterRng root(opt.seed);
  struct Candidate {
    Mat x, w;
    double bandwidth = kInf;
    double gamma = 0;
    int draw = -1;
    bool trimmed = false;
  } best;
  int used_h = hs.horizon;

  // A draw that leaves some user with zero slots cannot be rescued by a
  // bandwidth boost. If every draw at the minimal fractional horizon ends that
  // way, grant an extra slot and re-solve rather than give up.
  const int h_last = std::min(cap, hs.horizon + kHorizonEscalation);
  for (int h = hs.horizon; h <= h_last && best.draw < 0; ++h) {
    if (h != hs.horizon) {
      stage.lap();
      FractionalSolution fs = solve_bandwidth_relaxation(window_instance(inst, 0, h), opt);
      res.outer_rounds_total += fs.outer_rounds;
      res.times.solve_s += stage.lap();
      if (!fs.feasible) continue;
      res.fractional = std::move(fs);
    }
    used_h = h;
    const ProblemInstance win = window_instance(inst, 0, h);

    RoundingMode mode = opt.rounding;
    double theta = 0;
    Mat link_values;
    if (mode == RoundingMode::kSmart) {
      link_values = bandwidth_link_values(win);
      if (!fit_link_threshold(link_values, &theta, opt.tap)) mode = RoundingMode::kSimple;
    }

    std::vector<int> caps(win.n_users());
    for (int m = 0; m < win.n_users(); ++m) caps[m] = win.bw_users[m].energy_slots;

    for (int d = 0; d < opt.rounding_draws; ++d) {
      stage.lap();
      Mat x_r = round_one_draw(res.fractional.x, mode, &link_values, theta,
                               root.stream(101, d));
      const bool trimmed = enforce_row_budget(x_r, res.fractional.w, caps);
      res.times.rounding_s += stage.lap();

      Mat w_d = res.fractional.w.cwiseProduct(x_r);
      if (opt.reoptimize) {
        ReoptResult rr = reoptimize_shares(win, x_r, opt, &w_d);
        res.outer_rounds_total += rr.outer_rounds;
        w_d = std::move(rr.w);
        res.times.reopt_s += stage.lap();
      }

      BoostOutcome bo = boost_bandwidth(win, x_r, w_d, 1.0, opt);
      res.times.boost_s += stage.lap();
      if (!bo.ok) continue;
      if (bo.bandwidth_hz < best.bandwidth) {
        best = {std::move(x_r), std::move(bo.w), bo.bandwidth_hz, bo.gamma_exact, d, trimmed};
      }
    }
  }

  res.horizon_used = used_h;
  if (best.draw < 0) {
    res.failure = "bandwidth boost cap exceeded on every rounding draw";
    res.times.total_s = total.lap();
    return res;
  }

  const ProblemInstance win = window_instance(inst, 0, used_h);
  res.feasible = true;
  res.selected_draw = best.draw;
  res.integral_repaired = best.trimmed;
  res.gamma_final = best.gamma;
  res.schedule.x = std::move(best.x);
  res.schedule.w = std::move(best.w);
  res.schedule.slots_used = used_h;
  if (best.bandwidth > inst.params.bandwidth_hz * (1.0 + 1e-12)) {
    res.schedule.boosted_bandwidth_hz = best.bandwidth;
    res.boost_bandwidth_hz = best.bandwidth;
  }
  res.violations = eval_constraints(win, res.schedule, opt.gamma_tol);
  res.times.total_s = total.lap();
  return res;
}

ScheduleResult feasible_slot_schedule(const ProblemInstance& inst, const PipelineOptions& opt) {
  if (inst.variant != Variant::kFixedRate)
    throw std::invalid_argument("slot pipeline needs a fixed-rate instance");
  inst.validate();
  opt.hyper.validate();

  ScheduleResult res;
  Timer total, stage;

  const int cap = std::min(opt.horizon_cap, inst.params.horizon);
  HorizonSearch hs = search_min_horizon(
      [&](int t) -> std::optional<FractionalSolution> {
        FractionalSolution fs = solve_fixed_rate_relaxation(window_instance(inst, 0, t), opt);
        res.outer_rounds_total += fs.outer_rounds;
        if (!fs.feasible) return std::nullopt;
        return fs;
      },
      cap);
  if (!hs.found) {
    // The budgets cannot pay for any horizon in the window. When the slots
    // themselves suffice, plan the full window anyway; the energy boost pays
    // the overdraft. If even the slot counts do not fit, give up for real.
    FractionalSolution fs =
        solve_fixed_rate_relaxation(window_instance(inst, 0, cap), opt, true);
    res.outer_rounds_total += fs.outer_rounds;
    if (fs.x.size() > 0) {
      hs.found = true;
      hs.horizon = cap;
      hs.solution = std::move(fs);
    }
  }
  res.times.solve_s = stage.lap();
  if (!hs.found) {
    res.failure = "no feasible horizon within the cap";
    res.times.total_s = total.lap();
    return res;
  }

  res.fractional = std::move(hs.solution);

  CounterRng root(opt.seed);
  struct Candidate {
    Mat x;
    Vec budgets;
    double boost = kInf;
    int draw = -1;
    bool repaired = false;
  } best;
  int used_h = hs.horizon;

  // Same escalation idea as the bandwidth pipeline: when no draw survives the
  // slot repairs, widen the window before declaring defeat.
  const int h_last = std::min(cap, hs.horizon + kHorizonEscalation);
  for (int h = hs.horizon; h <= h_last && best.draw < 0; ++h) {
    if (h != hs.horizon) {
      stage.lap();
      FractionalSolution fs = solve_fixed_rate_relaxation(window_instance(inst, 0, h), opt);
      res.outer_rounds_total += fs.outer_rounds;
      res.times.solve_s += stage.lap();
      if (!fs.feasible) continue;
      res.fractional = std::move(fs);
    }
    used_h = h;
    const ProblemInstance win = window_instance(inst, 0, h);
    const int n = win.n_users();
    const int T = h;

    std::vector<int> need(n);
    for (int m = 0; m < n; ++m) need[m] = slots_needed(win.fr_users[m].demand_bits, win.params);

    RoundingMode mode = opt.rounding;
    double theta = 0;
    Mat link_values;
    if (mode == RoundingMode::kSmart) {
      link_values = fixed_rate_link_values(win);
      if (!fit_link_threshold(link_values, &theta, opt.tap)) mode = RoundingMode::kSimple;
    }

    for (int d = 0; d < opt.rounding_draws; ++d) {
      stage.lap();
      Mat x_r = round_one_draw(res.fractional.x, mode, &link_values, theta,
                               root.stream(102, d));
      bool repaired = false;

      // Column conflicts (possible after the bit-partitioned passes): keep the
      // occupant with the largest fractional weight.
      for (int t = 0; t < T; ++t) {
        int keep = -1;
        double keep_frac = -1;
        for (int m = 0; m < n; ++m)
          if (x_r(m, t) > 0.5 && res.fractional.x(m, t) > keep_frac) {
            keep_frac = res.fractional.x(m, t);
            keep = m;
          }
        for (int m = 0; m < n; ++m)
          if (x_r(m, t) > 0.5 && m != keep) {
            x_r(m, t) = 0;
            repaired = true;
          }
      }

      // Surplus trim: drop the costliest extras.
      for (int m = 0; m < n; ++m) {
        int count = static_cast<int>(x_r.row(m).sum() + 0.5);
        while (count > need[m]) {
          int drop = -1;
          double worst = -kInf;
          for (int t = 0; t < T; ++t)
            if (x_r(m, t) > 0.5 && slot_cost(win.fr_users[m], win.params, t) > worst) {
              worst = slot_cost(win.fr_users[m], win.params, t);
              drop = t;
            }
          x_r(m, drop) = 0;
          --count;
          repaired = true;
        }
      }

      // Deficit fill: free columns first, then steal from users with surplus.
      bool draw_ok = true;
      Vec colsum = x_r.colwise().sum();
      for (int m = 0; m < n && draw_ok; ++m) {
        int count = static_cast<int>(x_r.row(m).sum() + 0.5);
        while (count < need[m]) {
          int pick = -1;
          double pick_cost = kInf;
          for (int t = 0; t < T; ++t)
            if (colsum(t) < 0.5 && slot_usable(win.fr_users[m], win.params, t) &&
                slot_cost(win.fr_users[m], win.params, t) < pick_cost) {
              pick_cost = slot_cost(win.fr_users[m], win.params, t);
              pick = t;
            }
          if (pick >= 0) {
            x_r(m, pick) = 1;
            colsum(pick) = 1;
            ++count;
            repaired = true;
            continue;
          }
          // Steal a slot from a user holding more than it needs.
          int steal_t = -1, steal_j = -1;
          double steal_cost = kInf;
          for (int j = 0; j < n; ++j) {
            if (j == m) continue;
            const int cj = static_cast<int>(x_r.row(j).sum() + 0.5);
            if (cj <= need[j]) continue;
            for (int t = 0; t < T; ++t)
              if (x_r(j, t) > 0.5 && slot_usable(win.fr_users[m], win.params, t) &&
                  slot_cost(win.fr_users[m], win.params, t) < steal_cost) {
                steal_cost = slot_cost(win.fr_users[m], win.params, t);
                steal_t = t;
                steal_j = j;
              }
          }
          if (steal_t < 0) {
            draw_ok = false;
            break;
          }
          x_r(steal_j, steal_t) = 0;
          x_r(m, steal_t) = 1;
          ++count;
          repaired = true;
        }
      }
      res.times.rounding_s += stage.lap();
      if (!draw_ok) continue;

      const Vec budgets = boost_energy(win, x_r, opt.tap);
      double extra = 0;
      for (int m = 0; m < n; ++m) extra += budgets(m) - win.fr_users[m].energy_budget_j;
      res.times.boost_s += stage.lap();

      if (extra < best.boost) best = {std::move(x_r), budgets, extra, d, repaired};
    }
  }

  res.horizon_used = used_h;
  if (best.draw < 0) {
    res.failure = "no rounding draw yielded a repairable slot assignment";
    res.times.total_s = total.lap();
    return res;
  }

  const ProblemInstance win = window_instance(inst, 0, used_h);
  const int n = win.n_users();
  res.feasible = true;
  res.selected_draw = best.draw;
  res.integral_repaired = best.repaired;
  res.boost_energy_total_j = best.boost;
  res.schedule.x = std::move(best.x);
  res.schedule.slots_used = used_h;
  if (best.boost > 0) {
    res.schedule.boosted_energy_j = best.budgets;
    res.boost_energy_j = best.budgets;
  }
  double gamma = kInf;
  for (int m = 0; m < n; ++m)
    if (win.fr_users[m].demand_bits > 0)
      gamma = std::min(gamma, res.schedule.x.row(m).sum() * win.params.fixed_rate_bps *
                                  win.params.slot_s / win.fr_users[m].demand_bits);
  res.gamma_final = gamma;
  res.violations = eval_constraints(win, res.schedule, opt.gamma_tol);
  res.times.total_s = total.lap();
  return res;
}

BlockScheduleResult block_schedule(const ProblemInstance& inst, const PipelineOptions& opt) {
  if (inst.variant != Variant::kBlockShare)
    throw std::invalid_argument("block pipeline needs a per-block instance");
  inst.validate();
  opt.hyper.validate();
  const int t_s = inst.params.block_slots;
  if (t_s <= 0 || inst.params.horizon % t_s != 0)
    throw std::invalid_argument("horizon must be a whole number of blocks");

  BlockScheduleResult out;
  Timer total;
  const int n = inst.n_users();
  const int n_blocks = inst.params.horizon / t_s;

  Vec residual(n), remaining(n);
  for (int m = 0; m < n; ++m) {
    residual(m) = inst.bw_users[m].demand_bits;
    remaining(m) = inst.bw_users[m].energy_slots;
  }

  CounterRng root(opt.seed);
  for (int b = 0; b < n_blocks; ++b) {
    if ((residual.array() <= 1e-6).all()) break;

    ProblemInstance blk = window_instance(inst, b * t_s, t_s);
    std::vector<double> rem(n);
    for (int m = 0; m < n; ++m) {
      blk.bw_users[m].demand_bits = residual(m);
      // Couple the block's slot budget to what the user still has, so the
      // planned fraction always refers to spendable energy.
      blk.bw_users[m].energy_slots = static_cast<int>(std::floor(remaining(m) + 1e-9));
      rem[m] = remaining(m);
    }

    ScheduleResult br;
    Timer stage;
    FractionalSolution fs = solve_bandwidth_relaxation(blk, opt, rem);
    br.outer_rounds_total += fs.outer_rounds;
    br.times.solve_s = stage.lap();

    double gamma_plan = std::min(1.0, std::max(fs.gamma_exact, opt.min_block_progress));
    // Every transmission must finish inside this window; the last block takes
    // whatever is left in full and the boost pays for the shortfall.
    if (b == n_blocks - 1) gamma_plan = 1.0;
    br.horizon_used = t_s;
    br.fractional = fs;

    RoundingMode mode = opt.rounding;
    double theta = 0;
    Mat link_values;
    if (mode == RoundingMode::kSmart) {
      link_values = bandwidth_link_values(blk);
      if (!fit_link_threshold(link_values, &theta, opt.tap)) mode = RoundingMode::kSimple;
    }

    std::vector<int> caps(n);
    for (int m = 0; m < n; ++m)
      caps[m] = static_cast<int>(std::floor(
          std::min(gamma_plan * blk.bw_users[m].energy_slots, remaining(m)) + 1e-9));

    struct Candidate {
      Mat x, w;
      double bandwidth = kInf;
      double gamma = 0;
      int draw = -1;
      bool trimmed = false;
    } best;

    for (int d = 0; d < opt.rounding_draws; ++d) {
      stage.lap();
      Mat x_r = round_one_draw(fs.x, mode, &link_values, theta, root.stream(300 + b, d));
      const bool trimmed = enforce_row_budget(x_r, fs.w, caps);
      br.times.rounding_s += stage.lap();

      Mat w_d = fs.w.cwiseProduct(x_r);
      if (opt.reoptimize) {
        ReoptResult rr = reoptimize_shares(blk, x_r, opt, &w_d);
        br.outer_rounds_total += rr.outer_rounds;
        w_d = std::move(rr.w);
        br.times.reopt_s += stage.lap();
      }

      BoostOutcome bo = boost_bandwidth(blk, x_r, w_d, gamma_plan, opt);
      br.times.boost_s += stage.lap();
      if (!bo.ok) continue;
      if (bo.bandwidth_hz < best.bandwidth)
        best = {std::move(x_r), std::move(bo.w), bo.bandwidth_hz, bo.gamma_exact, d, trimmed};
    }

    if (best.draw < 0) {
      br.failure = "block bandwidth boost cap exceeded";
      br.times.total_s = br.times.solve_s + br.times.rounding_s + br.times.reopt_s +
                         br.times.boost_s;
      out.blocks.push_back(std::move(br));
      out.planned_fractions.push_back(gamma_plan);
      out.failure = "block " + std::to_string(b) + ": boost cap exceeded";
      out.total_seconds = total.lap();
      return out;
    }

    br.feasible = true;
    br.selected_draw = best.draw;
    br.integral_repaired = best.trimmed;
    br.gamma_final = best.gamma;
    br.schedule.x = best.x;
    br.schedule.w = best.w;
    br.schedule.slots_used = t_s;
    if (best.bandwidth > inst.params.bandwidth_hz * (1.0 + 1e-12)) {
      br.schedule.boosted_bandwidth_hz = best.bandwidth;
      br.boost_bandwidth_hz = best.bandwidth;
    }

    ProblemInstance eval_inst = blk;
    eval_inst.gamma_fraction = gamma_plan;
    br.violations = eval_constraints(eval_inst, br.schedule, opt.gamma_tol);
    br.times.total_s = br.times.solve_s + br.times.rounding_s + br.times.reopt_s +
                       br.times.boost_s;

    // Execute the block: exact bits served and slots burned.
    const double bw =
        best.bandwidth > 0 ? best.bandwidth : inst.params.bandwidth_hz;
    double progress = 0;
    for (int m = 0; m < n; ++m) {
      double served = 0;
      for (int t = 0; t < t_s; ++t)
        served += rate_bps(best.w(m, t), blk.bw_users[m].gains(t),
                           blk.bw_users[m].tx_power_w,
                           SystemParams{bw, blk.params.noise_w_hz, blk.params.slot_s, t_s}) *
                  blk.params.slot_s;
      progress += std::min(served, residual(m));
      residual(m) = std::max(0.0, residual(m) - served);
      remaining(m) -= best.x.row(m).sum();
    }
    out.blocks.push_back(std::move(br));
    out.planned_fractions.push_back(gamma_plan);

    if (progress <= 1e-9 && !(residual.array() <= 1e-6).all()) {
      out.failure = "block " + std::to_string(b) + ": no progress";
      out.total_seconds = total.lap();
      return out;
    }
  }

  out.complete = (residual.array() <= 1e-6).all();
  if (!out.complete && out.failure.empty())
    out.failure = "demand left after the last block";
  out.total_seconds = total.lap();
  return out;
}

} // namespace fedsched
