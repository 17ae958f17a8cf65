#include "fedsched/fedcore.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "fedsched/subsolve.hpp"

namespace fedsched {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

void FedHyper::validate() const {
  if (penalty_beta <= 0 || client_rho <= 0 || prox_sbar <= 0)
    throw std::invalid_argument("penalty, consensus and prox weights must be positive");
  if (tol_step <= 0 || tol_multiplier <= 0)
    throw std::invalid_argument("stopping tolerances must be positive");
  if (inner_decay <= 0 || inner_decay >= 1)
    throw std::invalid_argument("inner decay must lie in (0,1)");
  if (max_outer <= 0 || max_inner <= 0 || max_total_inner <= 0 || subsolver_iters <= 0)
    throw std::invalid_argument("iteration caps must be positive");
}

Vec update_multipliers(const Vec& mu, const Vec& c, double beta) {
  if (mu.size() != c.size()) throw std::invalid_argument("multiplier/constraint size mismatch");
  return (mu + beta * c).cwiseMax(0.0);
}

double augmented_penalty(const ConstraintBlock& blk, const Vec& mu, double beta,
                         const Vec& phi, Vec* grad_accum) {
  Vec c(blk.rows());
  blk.constraints(phi, c);
  const Vec shifted = (mu + beta * c).cwiseMax(0.0);
  if (grad_accum) blk.add_weighted_jacobian(phi, shifted, *grad_accum);
  return (shifted.squaredNorm() - mu.squaredNorm()) / (2.0 * beta);
}

// ---------------------------------------------------------------------------
// FedClient

FedClient::FedClient(int id, std::shared_ptr<const ClientProblem> problem)
    : id_(id), problem_(std::move(problem)) {
  if (!problem_) throw std::invalid_argument("client needs a problem");
  mu_ = Vec::Zero(problem_->rows());
}

void FedClient::reset(const FedHyper& hyper) {
  mu_ = Vec::Constant(problem_->rows(), hyper.mu_init);
  u_.resize(0);
  lambda_.resize(0);
}

void FedClient::begin_round(const Vec& phi_anchor, int n_participants, const FedHyper& hyper) {
  phi_anchor_ = phi_anchor;
  prox_weight_ = 1.0 / (2.0 * n_participants * hyper.penalty_beta);
}

double FedClient::penalty_value_grad(const Vec& phi, double beta, Vec* grad) const {
  double value = problem_->objective(phi, grad);
  value += augmented_penalty(*problem_, mu_, beta, phi, grad);
  const Vec d = phi - phi_anchor_;
  value += prox_weight_ * d.squaredNorm();
  if (grad) *grad += (2.0 * prox_weight_) * d;
  return value;
}

ClientSummary FedClient::init_inner(const FedHyper& hyper) {
  u_ = phi_anchor_;
  Vec grad(problem_->dim());
  penalty_value_grad(u_, hyper.penalty_beta, &grad);
  lambda_ = -grad;
  ClientSummary s;
  s.client_id = id_;
  s.u_shift = u_ + lambda_ / hyper.client_rho;
  s.eps_residual = 0;
  return s;
}

ClientSummary FedClient::inner_step(const ModelBroadcast& broadcast, double eps,
                                    const FedHyper& hyper) {
  const Vec& phi = broadcast.phi;
  const double rho = hyper.client_rho;
  const double beta = hyper.penalty_beta;

  // Inexactness certificate at the broadcast point, before updating.
  Vec grad_at_phi(problem_->dim());
  penalty_value_grad(phi, beta, &grad_at_phi);
  const double eps_tilde =
      (grad_at_phi + lambda_ - rho * (phi - u_)).lpNorm<Eigen::Infinity>();

  SmoothProblem local;
  local.dim = problem_->dim();
  local.eval = [&](const Vec& u, Vec* g) {
    double v = penalty_value_grad(u, beta, g);
    v += lambda_.dot(u - phi) + 0.5 * rho * (u - phi).squaredNorm();
    if (g) *g += lambda_ + rho * (u - phi);
    return v;
  };
  SolveResult sub = minimize_projected(local, u_, eps, hyper.subsolver_iters);
  subsolver_iters_used_ = sub.iters;
  u_ = std::move(sub.x);
  lambda_ += rho * (u_ - phi);

  ClientSummary s;
  s.client_id = id_;
  s.u_shift = u_ + lambda_ / rho;
  s.eps_residual = eps_tilde;
  return s;
}

MultiplierDeltaNorm FedClient::end_round(const Vec& phi_next, const FedHyper& hyper) {
  Vec c(problem_->rows());
  problem_->constraints(phi_next, c);
  const Vec mu_next = update_multipliers(mu_, c, hyper.penalty_beta);
  MultiplierDeltaNorm d;
  d.client_id = id_;
  d.delta_inf = (mu_next - mu_).lpNorm<Eigen::Infinity>();
  mu_ = mu_next;
  return d;
}

ClientReport FedClient::violation_report(const Vec& phi) const {
  Vec c(problem_->rows());
  problem_->constraints(phi, c);
  ClientReport r;
  r.client_id = id_;
  r.kind = "violation_inf";
  r.value = c.size() ? c.maxCoeff() : 0.0;
  r.value = std::max(r.value, 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Coordinator side

Vec coordinator_step(const CoordinatorState& state, const Vec& sum_u_shift,
                     double sum_sq_u_shift, int n_clients, double eps,
                     const Vec& warm_start, const FedHyper& hyper, double* residual_out) {
  const double rho = hyper.client_rho;
  SmoothProblem prob;
  prob.dim = state.problem->dim();
  prob.lower = state.box_lower;
  prob.upper = state.box_upper;
  prob.eval = [&](const Vec& phi, Vec* g) {
    double v = state.problem->objective_smooth(phi, g);
    v += augmented_penalty(*state.problem, state.mu0, hyper.penalty_beta, phi, g);
    const Vec d = phi - state.phi_anchor;
    v += state.prox_weight * d.squaredNorm();
    // consensus pull toward the shifted client iterates
    v += 0.5 * rho * (n_clients * phi.squaredNorm() - 2.0 * phi.dot(sum_u_shift) + sum_sq_u_shift);
    if (g) *g += (2.0 * state.prox_weight) * d + rho * (n_clients * phi - sum_u_shift);
    return v;
  };
  SolveResult res = minimize_projected(prob, warm_start, eps, hyper.subsolver_iters);
  if (residual_out) *residual_out = res.residual_inf;
  return res.x;
}

InnerResult inner_admm(CoordinatorState& state, std::vector<FedClient>& clients,
                       double delta, const FedHyper& hyper, const Vec& phi_start,
                       int outer_round, MessageLog* tap, int iter_cap) {
  const int dim = state.problem->dim();
  const int n = static_cast<int>(clients.size());

  Vec sum_u_shift = Vec::Zero(dim);
  double sum_sq_u_shift = 0;
  for (auto& cl : clients) {
    ClientSummary s = cl.init_inner(hyper);
    sum_u_shift += s.u_shift;
    sum_sq_u_shift += s.u_shift.squaredNorm();
    if (tap) tap->record(std::move(s));
  }

  InnerResult out;
  out.phi = phi_start;
  // The schedule q^t alone would reach tolerances no floating-point subsolver
  // can certify after a few hundred iterations, so it is floored at a tenth of
  // the certificate target: below that the stop condition gains nothing.
  const double eps_floor = 0.1 * delta;
  double eps = 1.0; // eps_{t+1} = q^t, so the first target is 1
  for (int t = 0; t < iter_cap; ++t) {
    double coord_residual = 0;
    out.phi = coordinator_step(state, sum_u_shift, sum_sq_u_shift, n, eps, out.phi,
                               hyper, &coord_residual);
    out.worst_subsolver_residual = std::max(out.worst_subsolver_residual, coord_residual);

    ModelBroadcast broadcast;
    broadcast.phi = out.phi;
    broadcast.outer_round = outer_round;
    broadcast.inner_iter = t + 1;
    if (tap) tap->record(broadcast);

    sum_u_shift.setZero();
    sum_sq_u_shift = 0;
    double eps_tilde_sum = 0;
    for (auto& cl : clients) {
      ClientSummary s = cl.inner_step(broadcast, eps, hyper);
      eps_tilde_sum += s.eps_residual;
      sum_u_shift += s.u_shift;
      sum_sq_u_shift += s.u_shift.squaredNorm();
      if (tap) tap->record(std::move(s));
    }

    out.iters = t + 1;
    out.eps_sum_final = eps + eps_tilde_sum;
    if (out.eps_sum_final <= delta) {
      out.converged = true;
      break;
    }
    eps = std::max(eps * hyper.inner_decay, eps_floor);
  }
  return out;
}

FedResult federated_solve(const CoordinatorProblem& coordinator,
                          std::vector<FedClient>& clients, const FedHyper& hyper,
                          const Vec& phi0, MessageLog* tap) {
  hyper.validate();
  const int dim = coordinator.dim();
  if (phi0.size() != dim) throw std::invalid_argument("phi0 has wrong dimension");
  for (auto& cl : clients)
    if (cl.problem().dim() != dim)
      throw std::invalid_argument("client dimension does not match coordinator");

  const auto t0 = Clock::now();
  const int participants = static_cast<int>(clients.size()) + 1;

  CoordinatorState state;
  state.problem = &coordinator;
  state.mu0 = Vec::Constant(coordinator.rows(), hyper.mu_init);
  state.box_lower.resize(dim);
  state.box_upper.resize(dim);
  coordinator.box(state.box_lower, state.box_upper);
  state.prox_weight = 1.0 / (2.0 * participants * hyper.penalty_beta);

  FedResult result;
  result.phi = phi0.cwiseMax(state.box_lower).cwiseMin(state.box_upper);
  for (auto& cl : clients) cl.reset(hyper);

  int inner_spent = 0;
  for (int k = 0; k < hyper.max_outer; ++k) {
    const int inner_left = hyper.max_total_inner - inner_spent;
    if (inner_left <= 0) break;
    const auto round_start = Clock::now();
    const double delta_k = hyper.prox_sbar / ((k + 1.0) * (k + 1.0));
    state.phi_anchor = result.phi;

    ModelBroadcast anchor_msg;
    anchor_msg.phi = result.phi;
    anchor_msg.outer_round = k;
    anchor_msg.inner_iter = 0;
    if (tap) tap->record(anchor_msg);
    for (auto& cl : clients) cl.begin_round(result.phi, participants, hyper);

    InnerResult inner = inner_admm(state, clients, delta_k, hyper, result.phi, k, tap,
                                   std::min(hyper.max_inner, inner_left));
    inner_spent += inner.iters;

    const double step_inf = (inner.phi - result.phi).lpNorm<Eigen::Infinity>();
    result.phi = inner.phi;

    Vec c0(coordinator.rows());
    coordinator.constraints(result.phi, c0);
    const Vec mu0_next = update_multipliers(state.mu0, c0, hyper.penalty_beta);
    double mu_delta = (mu0_next - state.mu0).lpNorm<Eigen::Infinity>();
    state.mu0 = mu0_next;
    for (auto& cl : clients) {
      MultiplierDeltaNorm d = cl.end_round(result.phi, hyper);
      mu_delta = std::max(mu_delta, d.delta_inf);
      if (tap) tap->record(std::move(d));
    }

    RoundStats stats;
    stats.outer_round = k;
    stats.delta = delta_k;
    stats.inner_iters = inner.iters;
    stats.step_inf = step_inf;
    stats.mu_delta_inf = mu_delta;
    stats.eps_sum_final = inner.eps_sum_final;
    stats.inner_converged = inner.converged;
    stats.seconds = seconds_since(round_start);
    result.log.rounds.push_back(stats);
    result.log.worst_subsolver_residual =
        std::max(result.log.worst_subsolver_residual, inner.worst_subsolver_residual);
    result.outer_rounds = k + 1;

    const double beta = hyper.penalty_beta;
    if (step_inf + beta * delta_k <= beta * hyper.tol_step &&
        mu_delta <= beta * hyper.tol_multiplier) {
      result.converged = true;
      break;
    }
  }

  result.log.converged = result.converged;
  result.log.seconds = seconds_since(t0);
  result.coordinator_multipliers = state.mu0;
  return result;
}

void write_convergence_csv(const std::string& path, const ConvergenceLog& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "round,delta,inner_iters,step_inf,mu_delta_inf,eps_sum_final,inner_converged,seconds\n";
  for (const auto& r : log.rounds)
    f << r.outer_round << ',' << r.delta << ',' << r.inner_iters << ',' << r.step_inf << ','
      << r.mu_delta_inf << ',' << r.eps_sum_final << ',' << (r.inner_converged ? 1 : 0) << ','
      << r.seconds << '\n';
}

} // namespace fedsched
