#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedsched/messages.hpp"
#include "fedsched/rng.hpp"
#include "fedsched/types.hpp"

namespace fedsched {

// Bipartite user/slot graph carrying fractional assignment values.  Node ids
// are users first (0..n-1) then slots (n..n+T-1); walks break ties by
// ascending node id so a draw is fully determined by the RNG stream.
struct RoundingEdge {
  int user = 0;
  int slot = 0;
  double value = 0;
};

struct RoundingGraph {
  int n_users = 0;
  int n_slots = 0;
  std::vector<RoundingEdge> edges;

  // Takes every strictly positive entry as an edge; values within snap_eps of
  // 0 or 1 are snapped before rounding begins.
  static RoundingGraph from_matrix(const Mat& y, double snap_eps = 1e-12);
  Mat to_matrix() const;
};

// Step magnitudes for one alternating path/cycle: values on the A-edges and
// the B-edges of the alternation.  alpha is how far A can rise while B falls;
// beta the reverse.
std::pair<double, double> alpha_beta(const std::vector<double>& a_values,
                                     const std::vector<double>& b_values);

// Settles every fractional edge by repeated alternating walks.  Walks start
// at a node of floating degree one when one exists (so path endpoints are
// always degree-one) and close into cycles otherwise; each draw moves the
// A-edges up with probability beta/(alpha+beta), preserving every edge's
// expectation and every node's floor/ceil degree.
void dependent_round(RoundingGraph& g, CounterRng& rng);

// Same mechanics restricted to edges whose flag is set (one pass of the
// bit-partitioned variant).
void dependent_round_subset(RoundingGraph& g, const std::vector<std::uint8_t>& in_subset,
                            CounterRng& rng);

// Bit-partitioned rounding: first the good-link edges, then the rest, then a
// sweep over the whole graph for anything still fractional.
void smart_dependent_round(RoundingGraph& g, const std::vector<std::uint8_t>& edge_bits,
                           CounterRng& rng);

// --- federated two-component mixture over client-held values ---------------

struct GmmComponent {
  double weight = 0.5;
  double mean = 0;
  double var = 1;
};

struct GmmFit {
  GmmComponent lo, hi; // ordered by mean
  int em_iters = 0;
  double loglik = 0;
  bool degenerate = false; // variance floored or single-point data
};

// One client's private value column (log link gains).  Only sufficient
// statistics and thresholded bits ever leave.
class GainClient {
public:
  GainClient(int id, Vec values);

  int id() const { return id_; }
  int count() const { return static_cast<int>(values_.size()); }

  GmmStats init_stats() const;
  GmmStats em_stats(const GmmFit& model) const;
  std::vector<GainBit> threshold_bits(double theta) const; // bit = value >= theta

private:
  int id_;
  Vec values_;
};

// Expectation-maximization driven purely by per-round GmmStats messages.
// Initialization splits the pooled mean by one pooled standard deviation.
GmmFit fit_gmm_federated(const std::vector<GainClient>& clients, int max_iters = 50,
                         double tol = 1e-8, MessageLog* tap = nullptr);

// Decision threshold between the two components: the density crossing between
// the means, falling back to the midpoint when no crossing lies there.
double gaussian_intersection(const GmmFit& fit, bool* fell_back = nullptr);

} // namespace fedsched
