#include "fedsched/rounding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedsched {

namespace {

constexpr double kSnap = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

bool floating(double y) { return y > kSnap && y < 1.0 - kSnap; }

void snap(double& y) {
  if (y <= kSnap) y = 0.0;
  else if (y >= 1.0 - kSnap) y = 1.0;
}

} // namespace

RoundingGraph RoundingGraph::from_matrix(const Mat& y, double snap_eps) {
  RoundingGraph g;
  g.n_users = static_cast<int>(y.rows());
  g.n_slots = static_cast<int>(y.cols());
  for (int m = 0; m < g.n_users; ++m)
    for (int t = 0; t < g.n_slots; ++t) {
      double v = y(m, t);
      if (v < -snap_eps || v > 1.0 + snap_eps)
        throw std::invalid_argument("rounding input outside [0,1]");
      v = std::clamp(v, 0.0, 1.0);
      if (v <= snap_eps) continue;
      if (v >= 1.0 - snap_eps) v = 1.0;
      g.edges.push_back({m, t, v});
    }
  return g;
}

Mat RoundingGraph::to_matrix() const {
  Mat y = Mat::Zero(n_users, n_slots);
  for (const auto& e : edges) y(e.user, e.slot) = e.value;
  return y;
}

std::pair<double, double> alpha_beta(const std::vector<double>& a_values,
                                     const std::vector<double>& b_values) {
  double alpha = kInf, beta = kInf;
  for (double y : a_values) {
    alpha = std::min(alpha, 1.0 - y);
    beta = std::min(beta, y);
  }
  for (double y : b_values) {
    alpha = std::min(alpha, y);
    beta = std::min(beta, 1.0 - y);
  }
  return {alpha, beta};
}

namespace {

struct WalkContext {
  RoundingGraph* g = nullptr;
  const std::vector<std::uint8_t>* subset = nullptr; // optional edge filter
  std::vector<std::vector<int>> adj;                  // node -> incident edge ids

  int n_nodes() const { return g->n_users + g->n_slots; }
  int user_node(int e) const { return g->edges[e].user; }
  int slot_node(int e) const { return g->n_users + g->edges[e].slot; }
  int other(int e, int node) const {
    return user_node(e) == node ? slot_node(e) : user_node(e);
  }
  bool active(int e) const {
    return (!subset || (*subset)[e]) && floating(g->edges[e].value);
  }

  void build() {
    adj.assign(n_nodes(), {});
    for (int e = 0; e < static_cast<int>(g->edges.size()); ++e)
      if (active(e)) {
        adj[user_node(e)].push_back(e);
        adj[slot_node(e)].push_back(e);
      }
  }

  int floating_degree(int node) const {
    int d = 0;
    for (int e : adj[node])
      if (active(e)) ++d;
    return d;
  }

  // Lowest-id neighbor reachable from `node` over an active edge != banned.
  int pick_edge(int node, int banned) const {
    int best = -1, best_other = std::numeric_limits<int>::max();
    for (int e : adj[node]) {
      if (e == banned || !active(e)) continue;
      const int o = other(e, node);
      if (o < best_other) {
        best_other = o;
        best = e;
      }
    }
    return best;
  }
};

void round_walks(RoundingGraph& g, const std::vector<std::uint8_t>* subset, CounterRng& rng) {
  WalkContext ctx;
  ctx.g = &g;
  ctx.subset = subset;
  ctx.build();

  const std::size_t max_rounds = g.edges.size() + 1;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    // Start node: prefer the lowest-id node with exactly one floating edge so
    // path endpoints always have degree one; otherwise every component is a
    // union of cycles and any lowest-id floating node works.
    int start = -1, fallback = -1;
    for (int v = 0; v < ctx.n_nodes() && start < 0; ++v) {
      const int d = ctx.floating_degree(v);
      if (d == 1) start = v;
      else if (d > 1 && fallback < 0) fallback = v;
    }
    if (start < 0) start = fallback;
    if (start < 0) return; // everything settled

    // Greedy walk with cycle detection.
    std::vector<int> path_edges;
    std::vector<int> path_nodes{start};
    std::vector<int> pos(ctx.n_nodes(), -1);
    pos[start] = 0;
    int cur = start, banned = -1;
    int cycle_from = -1;
    while (true) {
      const int e = ctx.pick_edge(cur, banned);
      if (e < 0) break; // maximal path
      const int nxt = ctx.other(e, cur);
      if (pos[nxt] >= 0) { // closed a cycle at nxt
        path_edges.push_back(e);
        cycle_from = pos[nxt];
        break;
      }
      path_edges.push_back(e);
      pos[nxt] = static_cast<int>(path_nodes.size());
      path_nodes.push_back(nxt);
      cur = nxt;
      banned = e;
    }
    if (path_edges.empty())
      throw std::logic_error("floating start node offered no edge");

    int first = 0;
    if (cycle_from >= 0) first = cycle_from; // keep only the cycle segment

    std::vector<double> a_vals, b_vals;
    for (int i = first; i < static_cast<int>(path_edges.size()); ++i) {
      const double y = g.edges[path_edges[i]].value;
      if ((i - first) % 2 == 0) a_vals.push_back(y);
      else b_vals.push_back(y);
    }
    const auto [alpha, beta] = alpha_beta(a_vals, b_vals);

    const bool raise_a = rng.next_double() < beta / (alpha + beta);
    const double step = raise_a ? alpha : -beta;
    for (int i = first; i < static_cast<int>(path_edges.size()); ++i) {
      double& y = g.edges[path_edges[i]].value;
      y += ((i - first) % 2 == 0) ? step : -step;
      snap(y);
    }
  }
  throw std::logic_error("rounding did not settle within the edge budget");
}

} // namespace

void dependent_round(RoundingGraph& g, CounterRng& rng) { round_walks(g, nullptr, rng); }

void dependent_round_subset(RoundingGraph& g, const std::vector<std::uint8_t>& in_subset,
                            CounterRng& rng) {
  if (in_subset.size() != g.edges.size())
    throw std::invalid_argument("subset mask size must match edge count");
  round_walks(g, &in_subset, rng);
}

void smart_dependent_round(RoundingGraph& g, const std::vector<std::uint8_t>& edge_bits,
                           CounterRng& rng) {
  if (edge_bits.size() != g.edges.size())
    throw std::invalid_argument("bit mask size must match edge count");
  std::vector<std::uint8_t> good(edge_bits.begin(), edge_bits.end());
  dependent_round_subset(g, good, rng);
  for (auto& b : good) b = !b;
  dependent_round_subset(g, good, rng);
  // Final sweep over everything; after the two passes nothing is fractional,
  // so this settles stragglers only if a pass was handed an empty partition.
  dependent_round(g, rng);
}

// ---------------------------------------------------------------------------
// Federated mixture fit

GainClient::GainClient(int id, Vec values) : id_(id), values_(std::move(values)) {
  if (values_.size() == 0) throw std::invalid_argument("gain client needs at least one value");
}

GmmStats GainClient::init_stats() const {
  GmmStats s;
  s.client_id = id_;
  s.count = static_cast<double>(values_.size());
  s.resp_count = Vec::Constant(1, s.count);
  s.resp_sum = Vec::Constant(1, values_.sum());
  s.resp_sumsq = Vec::Constant(1, values_.squaredNorm());
  s.min_value = values_.minCoeff();
  s.max_value = values_.maxCoeff();
  return s;
}

namespace {

double log_normal_pdf(double x, const GmmComponent& c) {
  const double d = x - c.mean;
  return std::log(c.weight) - 0.5 * std::log(2.0 * M_PI * c.var) - d * d / (2.0 * c.var);
}

} // namespace

GmmStats GainClient::em_stats(const GmmFit& model) const {
  GmmStats s;
  s.client_id = id_;
  s.count = static_cast<double>(values_.size());
  s.resp_count = Vec::Zero(2);
  s.resp_sum = Vec::Zero(2);
  s.resp_sumsq = Vec::Zero(2);
  for (int i = 0; i < values_.size(); ++i) {
    const double v = values_(i);
    const double llo = log_normal_pdf(v, model.lo);
    const double lhi = log_normal_pdf(v, model.hi);
    const double m = std::max(llo, lhi);
    const double elo = std::exp(llo - m), ehi = std::exp(lhi - m);
    const double z = elo + ehi;
    const double rlo = elo / z, rhi = ehi / z;
    s.resp_count(0) += rlo;
    s.resp_count(1) += rhi;
    s.resp_sum(0) += rlo * v;
    s.resp_sum(1) += rhi * v;
    s.resp_sumsq(0) += rlo * v * v;
    s.resp_sumsq(1) += rhi * v * v;
    s.loglik += m + std::log(z);
  }
  return s;
}

std::vector<GainBit> GainClient::threshold_bits(double theta) const {
  std::vector<GainBit> bits;
  bits.reserve(values_.size());
  for (int i = 0; i < values_.size(); ++i) {
    GainBit b;
    b.client_id = id_;
    b.slot = i;
    b.bit = values_(i) >= theta; // boundary values count as good links
    bits.push_back(b);
  }
  return bits;
}

GmmFit fit_gmm_federated(const std::vector<GainClient>& clients, int max_iters, double tol,
                         MessageLog* tap) {
  if (clients.empty()) throw std::invalid_argument("mixture fit needs clients");

  double count = 0, sum = 0, sumsq = 0;
  double lo_val = kInf, hi_val = -kInf;
  for (const auto& cl : clients) {
    GmmStats s = cl.init_stats();
    count += s.count;
    sum += s.resp_sum(0);
    sumsq += s.resp_sumsq(0);
    lo_val = std::min(lo_val, s.min_value);
    hi_val = std::max(hi_val, s.max_value);
    if (tap) tap->record(std::move(s));
  }

  const double mean = sum / count;
  const double var = std::max(sumsq / count - mean * mean, 0.0);
  const double sd = std::sqrt(var);

  GmmFit fit;
  fit.lo = {0.5, mean - sd, std::max(var, 1e-12)};
  fit.hi = {0.5, mean + sd, std::max(var, 1e-12)};
  if (sd == 0 || lo_val == hi_val) {
    fit.degenerate = true;
    return fit;
  }

  constexpr double kVarFloor = 1e-12;
  double prev_ll = -kInf;
  for (int it = 0; it < max_iters; ++it) {
    Vec rc = Vec::Zero(2), rs = Vec::Zero(2), rq = Vec::Zero(2);
    double ll = 0;
    for (const auto& cl : clients) {
      GmmStats s = cl.em_stats(fit);
      rc += s.resp_count;
      rs += s.resp_sum;
      rq += s.resp_sumsq;
      ll += s.loglik;
      if (tap) tap->record(std::move(s));
    }
    fit.em_iters = it + 1;
    fit.loglik = ll;

    for (int c = 0; c < 2; ++c) {
      GmmComponent& comp = c == 0 ? fit.lo : fit.hi;
      if (rc(c) <= 1e-12) { // component starved: keep it but flag
        fit.degenerate = true;
        continue;
      }
      comp.weight = rc(c) / count;
      comp.mean = rs(c) / rc(c);
      double v = rq(c) / rc(c) - comp.mean * comp.mean;
      if (v < kVarFloor) {
        v = kVarFloor;
        fit.degenerate = true;
      }
      comp.var = v;
    }
    if (fit.lo.mean > fit.hi.mean) std::swap(fit.lo, fit.hi);

    if (std::abs(ll - prev_ll) <= tol * (1.0 + std::abs(ll))) break;
    prev_ll = ll;
  }
  return fit;
}

double gaussian_intersection(const GmmFit& fit, bool* fell_back) {
  if (fell_back) *fell_back = false;
  const GmmComponent &lo = fit.lo, &hi = fit.hi;
  const double mid = 0.5 * (lo.mean + hi.mean);
  if (fit.degenerate || lo.mean == hi.mean) {
    if (fell_back) *fell_back = true;
    return mid;
  }

  // weight_lo N(x; lo) = weight_hi N(x; hi)  =>  a x^2 + b x + c = 0
  const double a = 0.5 * (1.0 / hi.var - 1.0 / lo.var);
  const double b = lo.mean / lo.var - hi.mean / hi.var;
  const double c = 0.5 * (hi.mean * hi.mean / hi.var - lo.mean * lo.mean / lo.var) +
                   std::log(lo.weight / hi.weight) +
                   0.5 * std::log(hi.var / lo.var);

  const double span = hi.mean - lo.mean;
  const double lo_end = lo.mean, hi_end = hi.mean;
  auto in_range = [&](double x) { return x >= lo_end && x <= hi_end; };

  if (std::abs(a) * span * span < 1e-12 * std::max(1.0, std::abs(b) * span)) {
    if (b != 0) {
      const double x = -c / b;
      if (in_range(x)) return x;
    }
    if (fell_back) *fell_back = true;
    return mid;
  }

  const double disc = b * b - 4 * a * c;
  if (disc < 0) {
    if (fell_back) *fell_back = true;
    return mid;
  }
  const double sq = std::sqrt(disc);
  const double r1 = (-b + sq) / (2 * a);
  const double r2 = (-b - sq) / (2 * a);
  if (in_range(r1) && in_range(r2)) return std::min(r1, r2);
  if (in_range(r1)) return r1;
  if (in_range(r2)) return r2;
  if (fell_back) *fell_back = true;
  return mid;
}

} // namespace fedsched
