#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mfgm/common.hpp"
#include "mfgm/model.hpp"

namespace mfgm {

struct FixedPointOptions {
  double tol = 1e-10;
  double theta = 0.5;  // Picard damping; drops to 0.1 on oscillation
  int max_iter = 200;
  bool accept_failure = false;  // warn instead of abort on non-convergence
};

struct FixedPointOutcome {
  int iterations = 0;
  double residual = 0;
  bool converged = false;
};

/// Per-node Nash control: damped Picard iteration on
/// alpha <- (1 - theta) alpha + theta * grad_p F(x, y, U, p, alpha).
/// `alpha` carries the initial guess in and the solution out. If the residual
/// fails to improve over 5 consecutive iterations the damping is tightened to
/// 0.1. Throws ConvergenceError unless accept_failure is set.
inline FixedPointOutcome solve_alpha_star(const ModelSpec& spec, span_c x,
                                          span_c y, span_c U, span_c p,
                                          span_m alpha,
                                          const FixedPointOptions& opt,
                                          std::vector<double>& g_scratch,
                                          std::vector<double>& p_scratch) {
  const int d = spec.d;
  g_scratch.resize(d);
  span_m g(g_scratch);
  double theta = opt.theta;
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;
  FixedPointOutcome out;
  for (int it = 0; it < opt.max_iter; ++it) {
    eval_gradpF(spec, x, y, U, p, alpha, g, p_scratch);
    double res = 0;
    for (int j = 0; j < d; ++j) res = std::max(res, std::abs(alpha[j] - g[j]));
    out.iterations = it + 1;
    out.residual = res;
    if (res <= opt.tol) {
      out.converged = true;
      return out;
    }
    if (res < best) {
      best = res;
      stall = 0;
    } else if (++stall >= 5) {
      theta = 0.1;
    }
    for (int j = 0; j < d; ++j)
      alpha[j] = (1.0 - theta) * alpha[j] + theta * g[j];
  }
  // Report the residual of the final iterate.
  eval_gradpF(spec, x, y, U, p, alpha, g, p_scratch);
  double res = 0;
  for (int j = 0; j < d; ++j) res = std::max(res, std::abs(alpha[j] - g[j]));
  out.residual = res;
  out.converged = res <= opt.tol;
  if (!out.converged && !opt.accept_failure)
    throw ConvergenceError("solve_alpha_star: no convergence after " +
                           std::to_string(opt.max_iter) +
                           " iterations, residual " + std::to_string(res));
  return out;
}

/// Bang-bang Poisson intensity of the penalized stopping problem:
/// 1/eps where phi - psi > tie_tol, 0 where phi - psi < -tie_tol, and 0 on
/// the tie band (pure-strategy tie break).
inline void compute_beta_star(span_c phi, span_c psi, double epsilon,
                              double tie_tol, span_m beta) {
  config_require(epsilon > 0, "compute_beta_star: epsilon must be positive");
  const double cap = 1.0 / epsilon;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    double gap = phi[i] - psi[i];
    beta[i] = (gap > tie_tol) ? cap : 0.0;
  }
}

}  // namespace mfgm
