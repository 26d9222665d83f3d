#pragma once

#include <algorithm>
#include <vector>

#include "mfgm/evolution.hpp"

namespace mfgm {

/// Penalized optimal stopping: bounded-intensity Poisson stopping rate
/// beta* <= 1/eps, penalty beta*(phi - psi)^+ on the major equation and
/// relaxation beta*(U - Ubar) on the master equation.
inline SolveResult solve_penalized(const ModelSpec& spec, const GridSpec& grid,
                                   const StoppingSpec& stop,
                                   const SolverOptions& opt = {}) {
  Engine eng(spec, grid, opt, Engine::Mode::Penalized, &stop);
  return run_engine(eng, opt);
}

/// Obstacle limit, pure-strategy reading: unconstrained step, then
/// phi <- min(phi, psi); U <- Ubar on the contact set.
inline SolveResult solve_obstacle(const ModelSpec& spec, const GridSpec& grid,
                                  const StoppingSpec& stop,
                                  const SolverOptions& opt = {}) {
  Engine eng(spec, grid, opt, Engine::Mode::Obstacle, &stop);
  return run_engine(eng, opt);
}

/// Compatibility diagnostic for Ubar: residual of the master equation with
/// U frozen at Ubar (controls taken from the initial major field). A large
/// value means the limit system cannot have classical solutions with this
/// post-stop cost; the solvers warn, they do not refuse.
inline double ubar_compatibility_residual(const ModelSpec& spec,
                                          const GridSpec& grid,
                                          const StoppingSpec& stop,
                                          const SolverOptions& opt = {}) {
  const std::size_t N = grid.num_nodes;
  const int k = spec.k, d = spec.d;
  std::vector<double> phi0(N), ubar(N * static_cast<std::size_t>(k));
  std::vector<double> x(k), y(d), u(k);
  for (std::size_t node = 0; node < N; ++node) {
    grid.node_coords(node, x, y);
    phi0[node] = spec.phi0(x, y);
    stop.Ubar(x, y, u);
    for (int c = 0; c < k; ++c)
      ubar[static_cast<std::size_t>(c) * N + node] = u[c];
  }
  std::vector<double> lap(N * static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c)
    laplacian_y(grid, span_c(ubar.data() + static_cast<std::size_t>(c) * N, N),
                span_m(lap.data() + static_cast<std::size_t>(c) * N, N));

  FixedPointOptions fpo{opt.tol_fp, opt.theta, opt.max_iter, true};
  double worst = 0;
  std::vector<double> p(d), alpha(d, 0.0), A(k), B(k), gs, ps;
  for (std::size_t node = 0; node < N; ++node) {
    grid.node_coords(node, x, y);
    for (int c = 0; c < k; ++c) u[c] = ubar[static_cast<std::size_t>(c) * N + node];
    for (int j = 0; j < d; ++j) {
      int axis = k + j;
      p[j] = upwind_diff(phi0, node, grid.axis_index(node, axis), grid.n[axis],
                         grid.stride[axis], grid.h[axis], 0.0);
    }
    std::fill(alpha.begin(), alpha.end(), 0.0);
    solve_alpha_star(spec, x, y, u, p, alpha, fpo, gs, ps);
    spec.A(x, y, u, alpha, A);
    spec.B(x, y, u, alpha, B);
    for (int c = 0; c < k; ++c) {
      std::size_t at = static_cast<std::size_t>(c) * N + node;
      double adv = 0;
      span_c Uc(ubar.data() + static_cast<std::size_t>(c) * N, N);
      for (int i = 0; i < k; ++i)
        adv += A[i] * upwind_diff(Uc, node, grid.axis_index(node, i), grid.n[i],
                                  grid.stride[i], grid.h[i], A[i]);
      for (int j = 0; j < d; ++j) {
        int axis = k + j;
        adv += alpha[j] * upwind_diff(Uc, node, grid.axis_index(node, axis),
                                      grid.n[axis], grid.stride[axis],
                                      grid.h[axis], alpha[j]);
      }
      double res = adv - spec.nu * lap[at] + spec.lambda * ubar[at] - B[c];
      worst = std::max(worst, std::abs(res));
    }
  }
  return worst;
}

}  // namespace mfgm
