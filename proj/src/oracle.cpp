#include "fedsched/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedsched/rng.hpp"
#include "fedsched/rounding.hpp"

namespace fedsched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// d/dw of B * w * log1p(a/w) / ln2: positive, decreasing, unbounded at 0+.
double rate_derivative(double w, double a, double bandwidth_hz) {
  if (a <= 0) return 0;
  const double r = a / w;
  return bandwidth_hz / M_LN2 * (std::log1p(r) - r / (1.0 + r));
}

struct Participant {
  int user = 0;
  double weight = 0; // theta_m
  double coef = 0;   // P g / (N0 B)
  double gain = 0;
  double power = 0;
};

// Share at which weight * rate'(w) == nu, capped at 1.
double share_at_marginal(const Participant& p, double nu, double bandwidth_hz) {
  if (p.weight * rate_derivative(1.0, p.coef, bandwidth_hz) >= nu) return 1.0;
  double lo = 0.0, hi = 1.0; // derivative above nu at lo+, below at hi
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (p.weight * rate_derivative(mid, p.coef, bandwidth_hz) >= nu)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace

double max_weighted_slot_rate(const Vec& theta, const std::vector<int>& scheduled,
                              const ProblemInstance& inst, int slot, Vec* w_out) {
  const SystemParams& p = inst.params;
  if (w_out) *w_out = Vec::Zero(inst.n_users());

  std::vector<Participant> parts;
  for (int m : scheduled) {
    const UserBandwidthData& u = inst.bw_users[m];
    const double g = u.gains(slot);
    if (theta(m) <= 0 || g <= 0) continue;
    parts.push_back({m, theta(m), u.tx_power_w * g / (p.noise_w_hz * p.bandwidth_hz), g,
                     u.tx_power_w});
  }
  if (parts.empty()) return 0;

  auto value_at = [&](const std::vector<double>& w) {
    double v = 0;
    for (std::size_t i = 0; i < parts.size(); ++i)
      v += parts[i].weight * rate_bps(w[i], parts[i].gain, parts[i].power, p);
    return v;
  };

  std::vector<double> w(parts.size(), 0.0);
  if (parts.size() == 1) {
    w[0] = 1.0;
  } else {
    // Water-filling: equalize the weighted marginal rate nu across users, then
    // bisect nu until the shares sum to one.
    auto total_share = [&](double nu) {
      double s = 0;
      for (const Participant& q : parts) s += share_at_marginal(q, nu, p.bandwidth_hz);
      return s;
    };
    double lo = kInf;
    for (const Participant& q : parts)
      lo = std::min(lo, q.weight * rate_derivative(1.0, q.coef, p.bandwidth_hz));
    lo = std::max(lo, 1e-300);
    double hi = lo;
    for (int it = 0; it < 300 && total_share(hi) > 1.0; ++it) hi *= 2;
    for (int it = 0; it < 100; ++it) {
      const double mid = std::sqrt(lo * hi);
      if (total_share(mid) > 1.0)
        lo = mid;
      else
        hi = mid;
    }
    for (std::size_t i = 0; i < parts.size(); ++i)
      w[i] = share_at_marginal(parts[i], hi, p.bandwidth_hz);
  }

  if (w_out)
    for (std::size_t i = 0; i < parts.size(); ++i) (*w_out)(parts[i].user) = w[i];
  return value_at(w);
}

namespace {

// Dual weight grids over the demanders' simplex.
std::vector<Vec> theta_grid(const std::vector<int>& demanders, int n_users,
                            const OracleOptions& opt) {
  std::vector<Vec> grid;
  const int d = static_cast<int>(demanders.size());
  if (d == 1) {
    Vec t = Vec::Zero(n_users);
    t(demanders[0]) = 1;
    grid.push_back(t);
  } else if (d == 2) {
    const int pts = std::max(2, opt.theta_points);
    for (int i = 0; i < pts; ++i) {
      const double s = static_cast<double>(i) / (pts - 1);
      Vec t = Vec::Zero(n_users);
      t(demanders[0]) = s;
      t(demanders[1]) = 1 - s;
      grid.push_back(t);
    }
  } else {
    const int S = std::max(2, opt.theta_subdiv);
    for (int i = 0; i <= S; ++i)
      for (int j = 0; j <= S - i; ++j) {
        Vec t = Vec::Zero(n_users);
        t(demanders[0]) = static_cast<double>(i) / S;
        t(demanders[1]) = static_cast<double>(j) / S;
        t(demanders[2]) = static_cast<double>(S - i - j) / S;
        grid.push_back(t);
      }
  }
  return grid;
}

std::vector<std::uint32_t> combinations(int horizon, int k) {
  std::vector<std::uint32_t> out;
  if (k == 0) {
    out.push_back(0);
    return out;
  }
  std::uint32_t mask = (1u << k) - 1;
  const std::uint32_t limit = 1u << horizon;
  while (mask < limit) {
    out.push_back(mask);
    // Next k-subset in lexicographic bit order (Gosper's hack).
    const std::uint32_t c = mask & static_cast<std::uint32_t>(-static_cast<std::int32_t>(mask));
    const std::uint32_t r = mask + c;
    mask = (((r ^ mask) >> 2) / c) | r;
  }
  return out;
}

} // namespace

OracleResult best_service_fraction(const ProblemInstance& inst, const OracleOptions& opt) {
  if (inst.variant == Variant::kFixedRate)
    throw std::invalid_argument("service-fraction oracle needs a shared-band instance");
  inst.validate();
  const double t0 = now_s();

  OracleResult res;
  const int n = inst.n_users();
  const int T = inst.params.horizon;
  const double tau = inst.params.slot_s;

  std::vector<int> demanders;
  for (int m = 0; m < n; ++m)
    if (inst.bw_users[m].demand_bits > 0) demanders.push_back(m);

  res.x = Mat::Zero(n, T);
  res.w = Mat::Zero(n, T);
  if (demanders.empty()) {
    res.feasible = true;
    res.gamma_star = res.gamma_upper = kInf;
    res.seconds = now_s() - t0;
    return res;
  }
  if (T > 31 || static_cast<int>(demanders.size()) > 3) {
    res.refused = true;
    res.seconds = now_s() - t0;
    return res;
  }

  // Maximal slot patterns: serving more slots never hurts (a slot can carry a
  // zero share), so each demander holds exactly min(budget, horizon) slots.
  std::vector<std::vector<std::uint32_t>> masks;
  std::int64_t total = 1;
  for (int m : demanders) {
    const int k = std::min(inst.bw_users[m].energy_slots, T);
    if (k == 0) { // demand with no slot budget: nothing can be served
      res.seconds = now_s() - t0;
      return res;
    }
    masks.push_back(combinations(T, k));
    total *= static_cast<std::int64_t>(masks.back().size());
    if (total > opt.candidate_cap) {
      res.refused = true;
      res.seconds = now_s() - t0;
      return res;
    }
  }

  const std::vector<Vec> grid = theta_grid(demanders, n, opt);
  const int n_theta = static_cast<int>(grid.size());
  const int d = static_cast<int>(demanders.size());
  const int n_pat = 1 << d;

  std::vector<double> demand_dot(n_theta);
  for (int i = 0; i < n_theta; ++i) {
    double b = 0;
    for (int m : demanders) b += grid[i](m) * inst.bw_users[m].demand_bits;
    demand_dot[i] = b;
  }

  // vals[(t * n_pat + pat) * n_theta + i] = best weighted rate of slot t when
  // the demanders in `pat` are scheduled, under dual weights grid[i].
  std::vector<double> vals(static_cast<std::size_t>(T) * n_pat * n_theta, 0.0);
  for (int t = 0; t < T; ++t)
    for (int pat = 1; pat < n_pat; ++pat) {
      std::vector<int> sched;
      for (int j = 0; j < d; ++j)
        if (pat & (1 << j)) sched.push_back(demanders[j]);
      double* row = &vals[(static_cast<std::size_t>(t) * n_pat + pat) * n_theta];
      for (int i = 0; i < n_theta; ++i)
        row[i] = max_weighted_slot_rate(grid[i], sched, inst, t);
    }

  // Score every candidate by its dual upper bound min_theta A(theta)/B(theta).
  std::vector<double> acc(n_theta);
  std::vector<int> pat(T);
  double best_value = -1;
  std::vector<std::size_t> best_idx(d, 0);
  std::vector<std::size_t> idx(d, 0);
  for (std::int64_t c = 0; c < total; ++c) {
    std::int64_t rem = c;
    for (int j = 0; j < d; ++j) {
      idx[j] = static_cast<std::size_t>(rem % static_cast<std::int64_t>(masks[j].size()));
      rem /= static_cast<std::int64_t>(masks[j].size());
    }
    for (int t = 0; t < T; ++t) {
      int p = 0;
      for (int j = 0; j < d; ++j)
        if (masks[j][idx[j]] & (1u << t)) p |= 1 << j;
      pat[t] = p;
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int t = 0; t < T; ++t) {
      const double* row = &vals[(static_cast<std::size_t>(t) * n_pat + pat[t]) * n_theta];
      for (int i = 0; i < n_theta; ++i) acc[i] += row[i];
    }
    double bound = kInf;
    for (int i = 0; i < n_theta; ++i) bound = std::min(bound, tau * acc[i] / demand_dot[i]);
    if (bound > best_value) {
      best_value = bound;
      best_idx = idx;
    }
  }
  res.enumerated = total;
  res.gamma_upper = best_value;

  // Winner's slot assignment.
  for (int j = 0; j < d; ++j)
    for (int t = 0; t < T; ++t)
      if (masks[j][best_idx[j]] & (1u << t)) res.x(demanders[j], t) = 1;

  std::vector<std::vector<int>> sched_at(T);
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j)
      if (res.x(demanders[j], t) > 0.5) sched_at[t].push_back(demanders[j]);

  auto dual_at = [&](const Vec& theta) {
    double a = 0, b = 0;
    for (int t = 0; t < T; ++t) a += max_weighted_slot_rate(theta, sched_at[t], inst, t);
    for (int m : demanders) b += theta(m) * inst.bw_users[m].demand_bits;
    return b > 0 ? tau * a / b : kInf;
  };
  // Served fractions of the water-filling split at the given weights; keeps
  // the split when it beats the incumbent primal.
  auto primal_at = [&](const Vec& theta, Mat* w_best, double best) {
    Mat w(n, T);
    Vec wt;
    for (int t = 0; t < T; ++t) {
      max_weighted_slot_rate(theta, sched_at[t], inst, t, &wt);
      w.col(t) = wt;
    }
    double gamma = kInf;
    for (int m : demanders) {
      double served = 0;
      for (int t = 0; t < T; ++t)
        served += tau * rate_bps(w(m, t), inst.bw_users[m].gains(t),
                                 inst.bw_users[m].tx_power_w, inst.params);
      gamma = std::min(gamma, served / inst.bw_users[m].demand_bits);
    }
    if (gamma > best) *w_best = w;
    return gamma;
  };

  // Polish the winner's dual weights: golden section over two demanders,
  // simplex pattern search over three.
  Vec theta_best = grid[0];
  {
    double f_best = kInf;
    for (const Vec& th : grid) {
      const double f = dual_at(th);
      if (f < f_best) {
        f_best = f;
        theta_best = th;
      }
    }
    if (d == 2) {
      const double h = 2.0 / (n_theta - 1);
      double lo = std::max(0.0, theta_best(demanders[0]) - h);
      double hi = std::min(1.0, theta_best(demanders[0]) + h);
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
      auto f_of = [&](double s) {
        Vec th = Vec::Zero(n);
        th(demanders[0]) = s;
        th(demanders[1]) = 1 - s;
        return dual_at(th);
      };
      double fa = f_of(a), fb = f_of(b);
      for (int it = 0; it < 120 && hi - lo > 1e-12; ++it) {
        if (fa < fb) {
          hi = b; b = a; fb = fa;
          a = hi - gr * (hi - lo); fa = f_of(a);
        } else {
          lo = a; a = b; fa = fb;
          b = lo + gr * (hi - lo); fb = f_of(b);
        }
      }
      Vec th = Vec::Zero(n);
      th(demanders[0]) = 0.5 * (lo + hi);
      th(demanders[1]) = 1 - th(demanders[0]);
      if (dual_at(th) < f_best) theta_best = th;
    } else if (d == 3) {
      double step = 1.0 / std::max(2, opt.theta_subdiv);
      Vec th = theta_best;
      double f = dual_at(th);
      while (step > 1e-7) {
        bool improved = false;
        for (int i = 0; i < 3 && !improved; ++i)
          for (int j = 0; j < 3 && !improved; ++j) {
            if (i == j) continue;
            Vec cand = th;
            cand(demanders[i]) += step;
            cand(demanders[j]) -= step;
            if (cand(demanders[j]) < 0) continue;
            const double fc = dual_at(cand);
            if (fc < f - 1e-15) {
              th = cand;
              f = fc;
              improved = true;
            }
          }
        if (!improved) step *= 0.5;
      }
      theta_best = th;
    }
  }

  // Primal recovery: best water-filling split across the grid and the
  // polished weights.
  res.theta = theta_best;
  double gamma_star = -kInf;
  for (const Vec& th : grid) gamma_star = std::max(gamma_star, primal_at(th, &res.w, gamma_star));
  gamma_star = std::max(gamma_star, primal_at(theta_best, &res.w, gamma_star));
  res.gamma_star = gamma_star;
  res.gamma_upper = std::max(res.gamma_upper, gamma_star);
  res.dual_gap = res.gamma_upper - res.gamma_star;
  res.feasible = res.gamma_star >= 1.0 - opt.service_tol;
  res.t_star = T;
  res.seconds = now_s() - t0;
  return res;
}

OracleResult min_horizon_shared_band(const ProblemInstance& inst, int t_cap,
                                     const OracleOptions& opt) {
  const double t0 = now_s();
  const int cap = std::min(t_cap, inst.params.horizon);
  const int n = inst.n_users();

  // Per-user solo rates: serving alone with the whole band is the per-slot
  // ceiling, so horizons whose best slots cannot carry the demand are skipped
  // without enumeration.
  Mat solo(n, cap);
  for (int m = 0; m < n; ++m)
    for (int t = 0; t < cap; ++t)
      solo(m, t) = rate_bps(1.0, inst.bw_users[m].gains(t), inst.bw_users[m].tx_power_w,
                            inst.params);

  OracleResult last;
  std::int64_t enumerated = 0;
  for (int T = 1; T <= cap; ++T) {
    bool plausible = true;
    for (int m = 0; m < n && plausible; ++m) {
      const UserBandwidthData& u = inst.bw_users[m];
      if (u.demand_bits <= 0) continue;
      std::vector<double> rates(solo.row(m).data(), solo.row(m).data() + T);
      const int k = std::min(u.energy_slots, T);
      std::partial_sort(rates.begin(), rates.begin() + k, rates.end(), std::greater<>());
      const double ceiling =
          inst.params.slot_s * std::accumulate(rates.begin(), rates.begin() + k, 0.0);
      if (ceiling < u.demand_bits * (1.0 - opt.service_tol)) plausible = false;
    }
    if (!plausible) continue;

    OracleResult r = best_service_fraction(window_instance(inst, 0, T), opt);
    enumerated += r.enumerated;
    if (r.refused) {
      r.enumerated = enumerated;
      r.seconds = now_s() - t0;
      return r;
    }
    if (r.feasible) {
      r.t_star = T;
      r.enumerated = enumerated;
      r.seconds = now_s() - t0;
      return r;
    }
    last = std::move(r);
  }
  last.feasible = false;
  last.t_star = 0;
  last.enumerated = enumerated;
  last.seconds = now_s() - t0;
  return last;
}

namespace {

// Depth-first owner-per-slot search for the fixed-rate program.
struct FixedRateSearch {
  const ProblemInstance& inst;
  const OracleOptions& opt;
  int n, T;
  Mat cost;                                  // budget units per (user, slot)
  std::vector<std::vector<int>> usable_after; // [m][t]: usable slots in [t, T)
  std::vector<std::vector<std::vector<double>>> cheapest_after; // sorted costs in [t, T)
  std::vector<int> need;
  std::vector<double> energy;
  std::vector<int> owner;
  std::int64_t nodes = 0;
  bool refused = false;

  FixedRateSearch(const ProblemInstance& i, const OracleOptions& o, int horizon)
      : inst(i), opt(o), n(i.n_users()), T(horizon) {
    cost.resize(n, T);
    usable_after.assign(n, std::vector<int>(T + 1, 0));
    cheapest_after.assign(n, std::vector<std::vector<double>>(T + 1));
    need.resize(n);
    energy.assign(n, 1.0);
    owner.assign(T, -1);
    for (int m = 0; m < n; ++m) {
      const UserFixedRateData& u = inst.fr_users[m];
      need[m] = slots_needed(u.demand_bits, inst.params);
      for (int t = 0; t < T; ++t) {
        const double p = u.slot_power_w(t);
        cost(m, t) = std::isfinite(p) ? p * inst.params.slot_s / u.energy_budget_j : kInf;
      }
      for (int t = T - 1; t >= 0; --t) {
        usable_after[m][t] = usable_after[m][t + 1] + (usable(m, t) ? 1 : 0);
        cheapest_after[m][t] = cheapest_after[m][t + 1];
        if (usable(m, t)) {
          auto& v = cheapest_after[m][t];
          v.insert(std::upper_bound(v.begin(), v.end(), cost(m, t)), cost(m, t));
        }
      }
    }
  }

  bool usable(int m, int t) const { return cost(m, t) <= 1.0 + opt.energy_slack; }

  bool dfs(int t, int total_need) {
    if (total_need == 0) return true;
    if (++nodes > opt.node_cap) {
      refused = true;
      return false;
    }
    if (t == T || total_need > T - t) return false;
    for (int m = 0; m < n; ++m) {
      if (need[m] == 0) continue;
      if (need[m] > usable_after[m][t]) return false;
      const auto& cheap = cheapest_after[m][t];
      const double completion =
          std::accumulate(cheap.begin(), cheap.begin() + need[m], 0.0);
      if (completion > energy[m] + opt.energy_slack) return false;
    }

    // Most constrained user first: least slack, then cheapest use of this slot.
    std::vector<int> order;
    for (int m = 0; m < n; ++m)
      if (need[m] > 0 && usable(m, t) && cost(m, t) <= energy[m] + opt.energy_slack)
        order.push_back(m);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const int sa = usable_after[a][t] - need[a];
      const int sb = usable_after[b][t] - need[b];
      if (sa != sb) return sa < sb;
      if (cost(a, t) != cost(b, t)) return cost(a, t) < cost(b, t);
      return a < b;
    });
    for (int m : order) {
      owner[t] = m;
      --need[m];
      energy[m] -= cost(m, t);
      if (dfs(t + 1, total_need - 1)) return true;
      energy[m] += cost(m, t);
      ++need[m];
      owner[t] = -1;
      if (refused) return false;
    }
    return dfs(t + 1, total_need);
  }
};

} // namespace

OracleResult min_horizon_fixed_rate(const ProblemInstance& inst, int t_cap,
                                    const OracleOptions& opt) {
  if (inst.variant != Variant::kFixedRate)
    throw std::invalid_argument("fixed-rate oracle needs a fixed-rate instance");
  inst.validate();
  const double t0 = now_s();

  OracleResult res;
  const int n = inst.n_users();
  int total_need = 0;
  for (int m = 0; m < n; ++m) total_need += slots_needed(inst.fr_users[m].demand_bits, inst.params);
  if (total_need == 0) {
    res.feasible = true;
    res.gamma_star = res.gamma_upper = 1.0;
    res.x = Mat::Zero(n, 0);
    res.seconds = now_s() - t0;
    return res;
  }

  const int cap = std::min(t_cap, inst.params.horizon);
  std::int64_t nodes = 0;
  for (int T = total_need; T <= cap; ++T) {
    const ProblemInstance win = window_instance(inst, 0, T);
    FixedRateSearch s(win, opt, T);
    const bool ok = s.dfs(0, total_need);
    nodes += s.nodes;
    if (s.refused) {
      res.refused = true;
      break;
    }
    if (ok) {
      res.feasible = true;
      res.t_star = T;
      res.gamma_star = res.gamma_upper = 1.0;
      res.x = Mat::Zero(n, T);
      for (int t = 0; t < T; ++t)
        if (s.owner[t] >= 0) res.x(s.owner[t], t) = 1;
      break;
    }
  }
  res.enumerated = nodes;
  res.seconds = now_s() - t0;
  return res;
}

Mat rounding_marginals_mc(const Mat& x_frac, int draws, std::uint64_t seed) {
  if (draws <= 0) throw std::invalid_argument("draw count must be positive");
  Mat acc = Mat::Zero(x_frac.rows(), x_frac.cols());
  CounterRng root(seed);
  for (int d = 0; d < draws; ++d) {
    RoundingGraph g = RoundingGraph::from_matrix(x_frac);
    CounterRng rng = root.stream(17, d);
    dependent_round(g, rng);
    acc += g.to_matrix();
  }
  return acc / draws;
}

} // namespace fedsched
