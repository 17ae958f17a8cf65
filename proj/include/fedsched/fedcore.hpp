#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fedsched/messages.hpp"
#include "fedsched/types.hpp"

namespace fedsched {

struct FedHyper {
  double penalty_beta = 15.0;  // constraint penalty / multiplier step
  double client_rho = 0.01;    // consensus weight (same for every client)
  double prox_sbar = 1e-3;     // delta_k = prox_sbar / (k+1)^2
  double tol_step = 0.5;       // outer stop on iterate movement (eps1)
  double tol_multiplier = 0.05; // outer stop on multiplier movement (eps2)
  double inner_decay = 0.9;    // inner tolerance schedule q, eps_{t+1} = q^t
  double mu_init = 0.0;
  int max_outer = 300;
  // Consensus iterations contract at a rate governed by client_rho versus the
  // penalty curvature; small rho needs a few thousand iterations before the
  // certificate sum reaches delta_k. A cap that is too tight lets the outer
  // loop run on half-optimized iterates, which can stall or stop early at a
  // collapsed point whose constraints are all slack.
  int max_inner = 4000;
  // Budget on inner iterations summed over all outer rounds. Convergent runs
  // use a small fraction of this; it mainly bounds the work burned on
  // infeasible instances, where the multiplier-movement stop can never fire.
  int max_total_inner = 100000;
  int subsolver_iters = 2000;

  void validate() const;
};

// A block of inequality constraints c(phi) <= 0 owned by one party.
class ConstraintBlock {
public:
  virtual ~ConstraintBlock() = default;
  virtual int dim() const = 0;
  virtual int rows() const = 0;
  virtual void constraints(const Vec& phi, Vec& c) const = 0;
  // grad += J(phi)^T * weights
  virtual void add_weighted_jacobian(const Vec& phi, const Vec& weights, Vec& grad) const = 0;
};

// Client-side problem data: local constraints plus an optional local cost.
class ClientProblem : public ConstraintBlock {
public:
  // Fills *grad (not accumulate) when non-null.  Default: no local cost.
  virtual double objective(const Vec& phi, Vec* grad) const {
    if (grad) grad->setZero();
    (void)phi;
    return 0;
  }
};

// Coordinator-side problem data: shared constraints, the smooth part of the
// public objective, and the box the iterate lives in.
class CoordinatorProblem : public ConstraintBlock {
public:
  virtual double objective_smooth(const Vec& phi, Vec* grad) const {
    if (grad) grad->setZero();
    (void)phi;
    return 0;
  }
  // Box bounds for the shared iterate (entries may be +-inf).
  virtual void box(Vec& lower, Vec& upper) const = 0;
};

// [mu + beta * c]_+ applied row-wise.
Vec update_multipliers(const Vec& mu, const Vec& c, double beta);

// Adds the smoothed augmented penalty (1/2beta)(||[mu + beta c(phi)]_+||^2
// - ||mu||^2) for one constraint block; accumulates the gradient.
double augmented_penalty(const ConstraintBlock& blk, const Vec& mu, double beta,
                         const Vec& phi, Vec* grad_accum);

// One participant: holds its multipliers and consensus state, exposes only
// message-typed interactions.
class FedClient {
public:
  FedClient(int id, std::shared_ptr<const ClientProblem> problem);

  int id() const { return id_; }
  const ClientProblem& problem() const { return *problem_; }

  void reset(const FedHyper& hyper);
  void begin_round(const Vec& phi_anchor, int n_participants, const FedHyper& hyper);
  // Consensus warm-up: local iterate at the anchor, multiplier-style dual from
  // the local gradient.  Returns the shifted iterate the coordinator averages.
  ClientSummary init_inner(const FedHyper& hyper);
  // One consensus update against the newly broadcast iterate, solved to
  // gradient tolerance eps.  eps_residual carries the local inexactness
  // certificate evaluated before the update.
  ClientSummary inner_step(const ModelBroadcast& broadcast, double eps, const FedHyper& hyper);
  // Multiplier ascent at the accepted outer iterate; reports only the norm.
  MultiplierDeltaNorm end_round(const Vec& phi_next, const FedHyper& hyper);

  // Largest local constraint violation at phi; crosses the boundary as a
  // scalar report.
  ClientReport violation_report(const Vec& phi) const;

  const Vec& multipliers() const { return mu_; }

private:
  double penalty_value_grad(const Vec& phi, double beta, Vec* grad) const;

  int id_;
  std::shared_ptr<const ClientProblem> problem_;
  Vec mu_;
  Vec u_, lambda_, phi_anchor_;
  double prox_weight_ = 0;
  int subsolver_iters_used_ = 0;

  friend struct FedClientTestPeek;
};

// Test-only window into client state (never used by the engine).
struct FedClientTestPeek {
  static const Vec& local_iterate(const FedClient& c) { return c.u_; }
  static const Vec& local_dual(const FedClient& c) { return c.lambda_; }
};

struct RoundStats {
  int outer_round = 0;
  double delta = 0;       // inner target for the round
  int inner_iters = 0;
  double step_inf = 0;     // ||phi_{k+1} - phi_k||_inf
  double mu_delta_inf = 0; // worst multiplier movement across participants
  double eps_sum_final = 0;
  bool inner_converged = false;
  double seconds = 0;
};

struct ConvergenceLog {
  std::vector<RoundStats> rounds;
  bool converged = false;
  double seconds = 0;
  double worst_subsolver_residual = 0;
};

void write_convergence_csv(const std::string& path, const ConvergenceLog& log);

struct FedResult {
  Vec phi;
  bool converged = false;
  int outer_rounds = 0;
  ConvergenceLog log;
  Vec coordinator_multipliers;
};

// Coordinator consensus step: minimizes the shared penalty plus the public
// objective plus (rho/2) sum_m ||u_shift_m - phi||^2 over the box, to
// projected-gradient tolerance eps.  Exposed for tests.
struct CoordinatorState {
  const CoordinatorProblem* problem = nullptr;
  Vec mu0;
  Vec phi_anchor;
  double prox_weight = 0;
  Vec box_lower, box_upper;
};

Vec coordinator_step(const CoordinatorState& state, const Vec& sum_u_shift,
                     double sum_sq_u_shift, int n_clients, double eps,
                     const Vec& warm_start, const FedHyper& hyper, double* residual_out);

struct InnerResult {
  Vec phi;
  int iters = 0;
  bool converged = false;
  double eps_sum_final = 0;
  double worst_subsolver_residual = 0;
};

// Inexact consensus loop run until the combined inexactness certificate
// drops below delta. iter_cap bounds this call; pass hyper.max_inner unless a
// global budget leaves less.
InnerResult inner_admm(CoordinatorState& state, std::vector<FedClient>& clients,
                       double delta, const FedHyper& hyper, const Vec& phi_start,
                       int outer_round, MessageLog* tap, int iter_cap);

// Full federated solve: proximal outer loop around inner_admm with multiplier
// ascent and the two-part stopping rule.
FedResult federated_solve(const CoordinatorProblem& coordinator,
                          std::vector<FedClient>& clients, const FedHyper& hyper,
                          const Vec& phi0, MessageLog* tap = nullptr);

} // namespace fedsched
