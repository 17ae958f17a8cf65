#include "fedsched/subsolve.hpp"

#include <cmath>
#include <stdexcept>

namespace fedsched {

namespace {

constexpr double kArmijoC1 = 1e-4;
constexpr double kStepMin = 1e-12;
constexpr double kStepMax = 1e12;

void project(const SmoothProblem& p, Vec& x) {
  if (p.lower.size() == x.size()) x = x.cwiseMax(p.lower);
  if (p.upper.size() == x.size()) x = x.cwiseMin(p.upper);
}

} // namespace

RateTerm rate_concave_term(double w, double a, double bandwidth) {
  RateTerm out;
  if (w <= kShareFloor || a <= 0) return out;
  // b*w*log2(1 + a/w); derivative b*(log2(1 + a/w) - a/(ln2*(w + a)))
  const double ratio = a / w;
  const double log_term = std::log1p(ratio) / M_LN2;
  out.value = bandwidth * w * log_term;
  out.dvalue = bandwidth * (log_term - ratio / ((1.0 + ratio) * M_LN2));
  return out;
}

SolveResult minimize_projected(const SmoothProblem& p, const Vec& x0, double tol_inf,
                               int max_iters) {
  if (!p.eval || p.dim <= 0) throw std::invalid_argument("smooth problem is not set up");
  if (x0.size() != p.dim) throw std::invalid_argument("start point has wrong dimension");

  SolveResult res;
  res.x = x0;
  project(p, res.x);

  Vec grad(p.dim), trial_grad(p.dim), prev_x, prev_grad;
  res.value = p.eval(res.x, &grad);

  double step = 1.0 / std::max(1.0, grad.lpNorm<Eigen::Infinity>());
  for (res.iters = 0; res.iters < max_iters; ++res.iters) {
    Vec probe = res.x - grad;
    project(p, probe);
    res.residual_inf = (res.x - probe).lpNorm<Eigen::Infinity>();
    if (res.residual_inf <= tol_inf) {
      res.converged = true;
      return res;
    }

    if (prev_x.size() == p.dim) {
      const Vec dx = res.x - prev_x;
      const Vec dg = grad - prev_grad;
      const double num = dx.squaredNorm();
      const double den = dx.dot(dg);
      if (den > 0 && num > 0) step = std::clamp(num / den, kStepMin, kStepMax);
    }

    prev_x = res.x;
    prev_grad = grad;

    double s = step;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      Vec trial = res.x - s * grad;
      project(p, trial);
      const Vec d = trial - res.x;
      const double dir = grad.dot(d);
      if (d.lpNorm<Eigen::Infinity>() == 0) break; // pinned at the boundary
      const double f_trial = p.eval(trial, &trial_grad);
      // The 1e-15 slack keeps progress possible once decrements drop to
      // rounding noise near the optimum.
      if (f_trial <= res.value + kArmijoC1 * dir + 1e-15 * (1.0 + std::abs(res.value))) {
        res.x = std::move(trial);
        res.value = f_trial;
        grad = trial_grad;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved) {
      // No descent step accepted; report the residual we are stuck at.
      Vec final_probe = res.x - grad;
      project(p, final_probe);
      res.residual_inf = (res.x - final_probe).lpNorm<Eigen::Infinity>();
      res.converged = res.residual_inf <= tol_inf;
      return res;
    }
  }

  Vec probe = res.x - grad;
  project(p, probe);
  res.residual_inf = (res.x - probe).lpNorm<Eigen::Infinity>();
  res.converged = res.residual_inf <= tol_inf;
  return res;
}

double gradient_mismatch(const SmoothProblem& p, const Vec& x, double h) {
  Vec grad(p.dim);
  p.eval(x, &grad);
  double worst = 0;
  Vec xp = x, xm = x;
  for (int i = 0; i < p.dim; ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    const double fd = (p.eval(xp, nullptr) - p.eval(xm, nullptr)) / (2 * h);
    xp(i) = x(i);
    xm(i) = x(i);
    const double scale = std::max({1.0, std::abs(grad(i)), std::abs(fd)});
    worst = std::max(worst, std::abs(fd - grad(i)) / scale);
  }
  return worst;
}

} // namespace fedsched
