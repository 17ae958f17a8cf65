#pragma once

#include <functional>

#include "fedsched/types.hpp"

namespace fedsched {

// Below this share the rate term is frozen to zero value and zero gradient so
// the log term cannot blow up; solvers count how much mass sits in the frozen
// region per solve.
inline constexpr double kShareFloor = 1e-6;

// min f(x) over lower <= x <= upper (either bound may be empty for "none").
struct SmoothProblem {
  int dim = 0;
  // Returns f(x); writes the gradient into *grad when grad != nullptr.
  std::function<double(const Vec&, Vec*)> eval;
  Vec lower;
  Vec upper;
};

struct SolveResult {
  Vec x;
  double value = 0;
  double residual_inf = 0; // ||x - proj(x - grad f(x))||_inf at unit step
  int iters = 0;
  bool converged = false;
};

// Projected gradient descent: Barzilai-Borwein initial step, Armijo
// backtracking with halving and sufficient-decrease constant 1e-4.
// Terminates when the unit-step projected-gradient residual drops below
// tol_inf (this is the optimality distance the federated loop certifies).
SolveResult minimize_projected(const SmoothProblem& p, const Vec& x0, double tol_inf,
                               int max_iters = 5000);

// value and d/dw of  bandwidth * w * log2(1 + a / w)  with the share floor
// applied (w <= kShareFloor reads as zero value / zero slope).  `a` is the
// dimensionless SNR coefficient power*gain/(noise*bandwidth).
struct RateTerm {
  double value = 0;
  double dvalue = 0;
};
RateTerm rate_concave_term(double w, double a, double bandwidth);

// Max relative mismatch between analytic gradient and central differences at
// x (testing aid).
double gradient_mismatch(const SmoothProblem& p, const Vec& x, double h = 1e-6);

} // namespace fedsched
