#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mfgm/evolution.hpp"
#include "mfgm/stopping.hpp"

namespace mfgm {

/// One measured sweep: parameter values, norms and the least-squares
/// log-log slope (NaN when fewer than 3 positive points).
struct SweepResult {
  std::vector<double> params;
  std::vector<double> norms;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double t1 = 0;
  double T = 0;
};

inline double fit_loglog_slope(std::span<const double> xs,
                               std::span<const double> ys) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0 && ys[i] > 0) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    }
  }
  if (lx.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {
inline void require_decades(std::span<const double> vals, const char* what) {
  config_require(vals.size() >= 3,
                 std::string(what) + ": at least 3 values required");
  for (double v : vals)
    config_require(v > 0, std::string(what) + ": values must be positive");
  double lo = vals.front(), hi = vals.front();
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  config_require(hi / lo >= 100.0 * (1.0 - 1e-12),
                 std::string(what) + ": values must span at least 2 decades");
}
}  // namespace detail

struct LambdaSweepResult {
  SweepResult u_norm;   // sup |U_lambda| over [t1, T] x grid
  SweepResult phi_gap;  // sup |phi_lambda - phi_myopic| over [t1, T] x grid
  double max_fp_residual = 0;
};

/// Crowd short-sightedness sweep: for each lambda the coupled system is
/// integrated in lockstep with the myopic reference and the window norms are
/// recorded. The initial layer [0, t1) is excluded.
inline LambdaSweepResult lambda_sweep(const ModelSpec& spec,
                                      const GridSpec& grid,
                                      std::span<const double> lambdas,
                                      double t1,
                                      const SolverOptions& opt = {}) {
  detail::require_decades(lambdas, "lambda_sweep");
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    config_require(lambdas[i] > lambdas[i - 1],
                   "lambda_sweep: values must be increasing");
  config_require(t1 > 0 && t1 < grid.T, "lambda_sweep: need 0 < t1 < T");

  LambdaSweepResult result;
  result.u_norm.t1 = result.phi_gap.t1 = t1;
  result.u_norm.T = result.phi_gap.T = grid.T;
  long nsteps = std::lround(grid.T / grid.dt);
  for (double lam : lambdas) {
    ModelSpec spec_l = spec;
    spec_l.lambda = lam;
    Engine sys(spec_l, grid, opt, Engine::Mode::System);
    Engine my(spec, grid, opt, Engine::Mode::Myopic);
    double norm_u = 0, norm_gap = 0;
    bool reached_window = false;
    for (long step = 1; step <= nsteps; ++step) {
      bool ok_sys = sys.advance();
      bool ok_my = my.advance();
      if (!ok_sys || !ok_my) {
        if (!reached_window)
          throw SweepError("lambda_sweep: run blew up before t1 at lambda = " +
                           std::to_string(lam));
        break;
      }
      if (sys.time() + 1e-12 >= t1) {
        reached_window = true;
        norm_u = std::max(norm_u, sup_norm(sys.U()));
        const auto& a = sys.phi();
        const auto& b = my.phi();
        for (std::size_t i = 0; i < a.size(); ++i)
          norm_gap = std::max(norm_gap, std::abs(a[i] - b[i]));
      }
    }
    result.u_norm.params.push_back(lam);
    result.u_norm.norms.push_back(norm_u);
    result.phi_gap.params.push_back(lam);
    result.phi_gap.norms.push_back(norm_gap);
    result.max_fp_residual =
        std::max({result.max_fp_residual, sys.diag().max_fp_residual,
                  my.diag().max_fp_residual});
  }
  result.u_norm.slope = fit_loglog_slope(result.u_norm.params, result.u_norm.norms);
  result.phi_gap.slope = fit_loglog_slope(result.phi_gap.params, result.phi_gap.norms);
  return result;
}

struct EpsilonSweepResult {
  SweepResult overshoot;     // final-time sup (phi_eps - psi)^+
  SweepResult obstacle_gap;  // final-time sup |phi_eps - phi_obstacle|
  SolveResult obstacle_run;
};

/// Penalization sweep toward the obstacle limit.
inline EpsilonSweepResult epsilon_sweep(const ModelSpec& spec,
                                        const GridSpec& grid,
                                        const StoppingSpec& stop,
                                        std::span<const double> epsilons,
                                        const SolverOptions& opt = {}) {
  detail::require_decades(epsilons, "epsilon_sweep");
  for (std::size_t i = 1; i < epsilons.size(); ++i)
    config_require(epsilons[i] < epsilons[i - 1],
                   "epsilon_sweep: values must be decreasing");

  EpsilonSweepResult result;
  result.obstacle_run = solve_obstacle(spec, grid, stop, opt);
  if (result.obstacle_run.diag.blowup_tripped)
    throw SweepError("epsilon_sweep: obstacle reference run blew up");

  std::vector<double> psi(grid.num_nodes);
  {
    std::vector<double> x(spec.k), y(spec.d);
    for (std::size_t node = 0; node < grid.num_nodes; ++node) {
      grid.node_coords(node, x, y);
      psi[node] = stop.psi(x, y);
    }
  }
  for (double eps : epsilons) {
    StoppingSpec s = stop;
    s.epsilon = eps;
    SolveResult run = solve_penalized(spec, grid, s, opt);
    if (run.diag.blowup_tripped)
      throw SweepError("epsilon_sweep: run blew up at epsilon = " +
                       std::to_string(eps));
    double over = 0, gap = 0;
    for (std::size_t i = 0; i < grid.num_nodes; ++i) {
      over = std::max(over, run.phi[i] - psi[i]);
      gap = std::max(gap, std::abs(run.phi[i] - result.obstacle_run.phi[i]));
    }
    result.overshoot.params.push_back(eps);
    result.overshoot.norms.push_back(std::max(over, 0.0));
    result.obstacle_gap.params.push_back(eps);
    result.obstacle_gap.norms.push_back(gap);
  }
  result.overshoot.T = result.obstacle_gap.T = grid.T;
  result.overshoot.slope =
      fit_loglog_slope(result.overshoot.params, result.overshoot.norms);
  result.obstacle_gap.slope =
      fit_loglog_slope(result.obstacle_gap.params, result.obstacle_gap.norms);
  return result;
}

struct RefinementResult {
  std::vector<double> level_diffs;  // sup difference between consecutive levels
  double observed_order = std::numeric_limits<double>::quiet_NaN();
  int levels_completed = 0;
  std::vector<std::size_t> level_nodes;
};

inline GridSpec refine_grid(const GridSpec& g) {
  GridSpec f = g;
  for (auto& n : f.n_x) n = 2 * n - 1;
  for (auto& n : f.n_y) n = 2 * n - 1;
  f.dt = g.dt / 2.0;
  f.finalize();
  return f;
}

/// Self-convergence study: each level halves dt and the grid spacings, and
/// consecutive final states are compared on the shared coarse nodes.
inline RefinementResult refinement_study(const ModelSpec& spec,
                                         const GridSpec& grid, int levels,
                                         Engine::Mode mode,
                                         const StoppingSpec* stop = nullptr,
                                         const SolverOptions& opt = {},
                                         std::size_t node_guard = 2'000'000) {
  config_require(levels >= 2, "refinement_study: levels must be >= 2");
  RefinementResult result;
  GridSpec prev_grid;
  SolveResult prev;
  GridSpec cur = grid;
  for (int lvl = 0; lvl < levels; ++lvl) {
    if (cur.num_nodes > node_guard) break;  // partial result
    Engine eng(spec, cur, opt, mode, stop);
    SolveResult run = run_engine(eng, opt);
    if (run.diag.blowup_tripped)
      throw SweepError("refinement_study: run blew up at level " +
                       std::to_string(lvl));
    result.level_nodes.push_back(cur.num_nodes);
    if (lvl > 0) {
      // Coarse multi-index maps to twice itself on the fine grid.
      double diff = 0;
      std::vector<int> idx(prev_grid.k + prev_grid.d);
      for (std::size_t node = 0; node < prev_grid.num_nodes; ++node) {
        prev_grid.multi_index(node, idx);
        std::size_t fine = 0;
        for (int a = 0; a < cur.k + cur.d; ++a)
          fine += cur.stride[a] * static_cast<std::size_t>(2 * idx[a]);
        diff = std::max(diff, std::abs(prev.phi[node] - run.phi[fine]));
        for (int c = 0; c < spec.k && !prev.U.empty(); ++c)
          diff = std::max(diff, std::abs(prev.U[static_cast<std::size_t>(c) * prev_grid.num_nodes + node] -
                                         run.U[static_cast<std::size_t>(c) * cur.num_nodes + fine]));
      }
      result.level_diffs.push_back(diff);
    }
    prev = std::move(run);
    prev_grid = cur;
    result.levels_completed = lvl + 1;
    if (lvl + 1 < levels) cur = refine_grid(cur);
  }
  if (result.level_diffs.size() >= 2) {
    double acc = 0;
    int cnt = 0;
    for (std::size_t i = 0; i + 1 < result.level_diffs.size(); ++i) {
      if (result.level_diffs[i] > 0 && result.level_diffs[i + 1] > 0) {
        acc += std::log2(result.level_diffs[i] / result.level_diffs[i + 1]);
        ++cnt;
      }
    }
    if (cnt > 0) result.observed_order = acc / cnt;
  }
  return result;
}

}  // namespace mfgm
