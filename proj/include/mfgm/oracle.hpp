#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mfgm/common.hpp"
#include "mfgm/evolution.hpp"
#include "mfgm/model.hpp"
#include "mfgm/stopping.hpp"

namespace mfgm {

/// Transition-rate reading of the crowd transport: a k x k rate matrix Q
/// (off-diagonal >= 0, rows summing to 0) induces the mass-conserving
/// coupling A = Q^T x.
struct RateMatrixCoupling {
  int k = 0;
  /// (x, y, U, alpha) -> k*k reals, row-major.
  std::function<void(span_c, span_c, span_c, span_c, span_m)> Q;
};

inline void validate_rate_matrix(span_c Q, int k) {
  for (int i = 0; i < k; ++i) {
    double row = 0, scale = 0;
    for (int j = 0; j < k; ++j) {
      double q = Q[static_cast<std::size_t>(i) * k + j];
      if (i != j && q < 0)
        throw ValidationError("rate matrix: negative off-diagonal entry");
      row += q;
      scale = std::max(scale, std::abs(q));
    }
    if (std::abs(row) > 1e-12 * std::max(1.0, scale))
      throw ValidationError("rate matrix: row does not sum to zero");
  }
}

inline InteractionFn coupling_from_rate_matrix(const RateMatrixCoupling& rc) {
  config_require(rc.k >= 1 && static_cast<bool>(rc.Q),
                 "coupling_from_rate_matrix: k and Q required");
  int k = rc.k;
  auto Qfn = rc.Q;
  return [k, Qfn](span_c x, span_c y, span_c U, span_c alpha, span_m out) {
    static thread_local std::vector<double> Q;
    Q.resize(static_cast<std::size_t>(k) * k);
    Qfn(x, y, U, alpha, Q);
    for (int j = 0; j < k; ++j) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += Q[static_cast<std::size_t>(i) * k + j] * x[i];
      out[j] = s;
    }
  };
}

/// Freezes Q at one evaluation point (the oracle has no equilibrium
/// feedback) and validates it.
inline std::vector<double> freeze_rate_matrix(const RateMatrixCoupling& rc,
                                              span_c x, span_c y, span_c U,
                                              span_c alpha) {
  std::vector<double> Q(static_cast<std::size_t>(rc.k) * rc.k);
  rc.Q(x, y, U, alpha, Q);
  validate_rate_matrix(Q, rc.k);
  return Q;
}

/// Histogram values at a list of snapshot times, row-major times x k.
struct HistTrajectory {
  int k = 0;
  std::vector<double> times;
  std::vector<double> hist;
  double at(std::size_t ti, int c) const {
    return hist[ti * static_cast<std::size_t>(k) + c];
  }
};

/// Monte Carlo simulation of N independent continuous-time jump processes on
/// {1..k} with frozen rate matrix Q. Returns the empirical unnormalized
/// histogram (scaled by sum(x0)/N). Per-particle substreams are derived from
/// the seed, so the result is bitwise reproducible for any worker count.
inline HistTrajectory particle_simulate(span_c Q, int k, span_c x0,
                                        span_c times, long N,
                                        std::uint64_t seed, int workers = 1) {
  validate_rate_matrix(Q, k);
  config_require(N >= 1, "particle_simulate: N must be positive");
  double mass = 0;
  for (double v : x0) {
    config_require(v >= 0, "particle_simulate: x0 must be nonnegative");
    mass += v;
  }
  config_require(mass > 0, "particle_simulate: total mass must be positive");
  const std::size_t S = times.size();
  const int nchunks = resolve_workers(workers);
  std::vector<std::vector<std::int64_t>> counts(
      static_cast<std::size_t>(nchunks),
      std::vector<std::int64_t>(S * static_cast<std::size_t>(k), 0));
  std::size_t chunk = (static_cast<std::size_t>(N) + nchunks - 1) / nchunks;

  parallel_for(static_cast<std::size_t>(N), workers,
               [&](std::size_t b, std::size_t e) {
    auto& local = counts[b / std::max<std::size_t>(chunk, 1)];
    for (std::size_t pi = b; pi < e; ++pi) {
      SplitMix64 rng(seed ^ (0x5851f42d4c957f2dull * (pi + 1)));
      // initial state ~ x0 / mass
      double u = rng.uniform() * mass;
      int s = 0;
      double acc = 0;
      for (int i = 0; i < k; ++i) {
        acc += x0[i];
        if (u < acc) {
          s = i;
          break;
        }
        s = i;
      }
      double t = 0;
      std::size_t si = 0;
      while (si < S) {
        double rate = -Q[static_cast<std::size_t>(s) * k + s];
        double tnext = rate > 0 ? t + rng.exponential(rate)
                                : std::numeric_limits<double>::infinity();
        while (si < S && times[si] <= tnext) {
          ++local[si * static_cast<std::size_t>(k) + s];
          ++si;
        }
        if (si >= S) break;
        t = tnext;
        // jump: pick next state among off-diagonal rates
        double ujump = rng.uniform() * rate;
        double cum = 0;
        int snew = s;
        for (int j = 0; j < k; ++j) {
          if (j == s) continue;
          cum += Q[static_cast<std::size_t>(s) * k + j];
          if (ujump < cum) {
            snew = j;
            break;
          }
          snew = j == s ? snew : j;
        }
        s = snew;
      }
    }
  });

  HistTrajectory out;
  out.k = k;
  out.times.assign(times.begin(), times.end());
  out.hist.assign(S * static_cast<std::size_t>(k), 0.0);
  const double scale = mass / static_cast<double>(N);
  for (const auto& local : counts)
    for (std::size_t i = 0; i < out.hist.size(); ++i)
      out.hist[i] += static_cast<double>(local[i]);
  for (double& v : out.hist) v *= scale;
  return out;
}

/// RK4 integration of the forward equation xdot = Q^T x, the histogram
/// characteristic of the rate-matrix coupling. Conserves total mass to
/// roundoff since every stage sums to zero.
inline HistTrajectory ode_histogram(span_c Q, int k, span_c x0, span_c times,
                                    double dt_sub = 1e-4) {
  validate_rate_matrix(Q, k);
  HistTrajectory out;
  out.k = k;
  out.times.assign(times.begin(), times.end());
  out.hist.resize(times.size() * static_cast<std::size_t>(k));
  std::vector<double> x(x0.begin(), x0.end()), k1(k), k2(k), k3(k), k4(k), tmp(k);
  auto deriv = [&](const std::vector<double>& v, std::vector<double>& dv) {
    for (int j = 0; j < k; ++j) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += Q[static_cast<std::size_t>(i) * k + j] * v[i];
      dv[j] = s;
    }
  };
  double t = 0;
  for (std::size_t si = 0; si < times.size(); ++si) {
    double target = times[si];
    while (t < target - 1e-15) {
      double h = std::min(dt_sub, target - t);
      deriv(x, k1);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
      deriv(tmp, k2);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
      deriv(tmp, k3);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + h * k3[j];
      deriv(tmp, k4);
      for (int j = 0; j < k; ++j)
        x[j] += h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
      t += h;
    }
    for (int j = 0; j < k; ++j)
      out.hist[si * static_cast<std::size_t>(k) + j] = x[j];
  }
  return out;
}

/// RK4 trace of the crowd histogram characteristic xdot = A(x, y, U, alpha)
/// with frozen controls.
inline HistTrajectory trace_characteristic(const InteractionFn& A, int k,
                                           span_c x0, span_c y, span_c U,
                                           span_c alpha, span_c times,
                                           double dt_sub = 1e-4) {
  HistTrajectory out;
  out.k = k;
  out.times.assign(times.begin(), times.end());
  out.hist.resize(times.size() * static_cast<std::size_t>(k));
  std::vector<double> x(x0.begin(), x0.end()), k1(k), k2(k), k3(k), k4(k), tmp(k);
  auto deriv = [&](const std::vector<double>& v, std::vector<double>& dv) {
    A(v, y, U, alpha, dv);
  };
  double t = 0;
  for (std::size_t si = 0; si < times.size(); ++si) {
    double target = times[si];
    while (t < target - 1e-15) {
      double h = std::min(dt_sub, target - t);
      deriv(x, k1);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
      deriv(tmp, k2);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
      deriv(tmp, k3);
      for (int j = 0; j < k; ++j) tmp[j] = x[j] + h * k3[j];
      deriv(tmp, k4);
      for (int j = 0; j < k; ++j)
        x[j] += h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
      t += h;
    }
    for (int j = 0; j < k; ++j)
      out.hist[si * static_cast<std::size_t>(k) + j] = x[j];
  }
  return out;
}

/// Worst relative disagreement between the supplied grad_p F and the central
/// finite-difference fallback over random sample points.
inline double fd_check_gradp(const ModelSpec& spec, int samples,
                             std::uint64_t seed) {
  config_require(static_cast<bool>(spec.gradpF),
                 "fd_check_gradp: model supplies no gradpF");
  SplitMix64 rng(seed);
  std::vector<double> x(spec.k), y(spec.d), U(spec.k), p(spec.d), alpha(spec.d);
  std::vector<double> gs(spec.d), gf(spec.d), pscr;
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    for (auto& v : x) v = rng.uniform(0.0, 2.0);
    for (auto& v : y) v = rng.uniform(-2.0, 2.0);
    for (auto& v : U) v = rng.uniform(-1.0, 1.0);
    for (auto& v : p) v = rng.uniform(-2.0, 2.0);
    for (auto& v : alpha) v = rng.uniform(-1.0, 1.0);
    spec.gradpF(x, y, U, p, alpha, gs);
    fd_gradpF(spec, x, y, U, p, alpha, gf, pscr);
    double scale = std::max({1.0, sup_norm(gs), sup_norm(gf)});
    for (int j = 0; j < spec.d; ++j)
      worst = std::max(worst, std::abs(gs[j] - gf[j]) / scale);
  }
  return worst;
}

enum class ReductionCase { CrowdOde, PenaltyRelaxation };

struct ReductionParams {
  double lambda = 10.0;  // crowd discount (CrowdOde)
  double b = 1.0;        // constant source B (CrowdOde)
  double eps = 0.1;      // intensity bound (PenaltyRelaxation)
  double gap0 = 1.0;     // initial phi - psi (PenaltyRelaxation)
  double T = 1.0;
  double dt = 1e-3;
};

namespace detail {
inline ModelSpec decoupled_scalar_model(double lambda, double b) {
  ModelSpec m;
  m.k = 1;
  m.d = 1;
  m.nu = 0.05;
  m.rho = 0;
  m.lambda = lambda;
  m.F = [](span_c, span_c, span_c, span_c, span_c) { return 0.0; };
  m.gradpF = [](span_c, span_c, span_c, span_c, span_c, span_m g) { g[0] = 0.0; };
  m.A = [](span_c, span_c, span_c, span_c, span_m a) { a[0] = 0.0; };
  m.B = [b](span_c, span_c, span_c, span_c, span_m out) { out[0] = b; };
  m.U0 = [](span_c, span_c, span_m u) { u[0] = 0.0; };
  m.phi0 = [](span_c, span_c) { return 0.0; };
  return m;
}

inline GridSpec tiny_grid(double T, double dt) {
  GridSpec g;
  g.x_min = {0.0};
  g.x_max = {1.0};
  g.n_x = {2};
  g.y_min = {-1.0};
  g.y_max = {1.0};
  g.n_y = {3};
  g.T = T;
  g.dt = dt;
  g.finalize();
  return g;
}
}  // namespace detail

/// Runs the main solver on a decoupled scalar scenario and compares every
/// step against the closed form. CrowdOde pins the implemented sign of the
/// master equation (dU/dt + lambda U = B); PenaltyRelaxation pins the
/// penalty and relaxation terms (decay at rate 1/eps toward psi and Ubar).
inline double scalar_reduction_check(ReductionCase rcase,
                                     const ReductionParams& prm) {
  SolverOptions opt;
  opt.snapshot_every = 1;
  GridSpec g = detail::tiny_grid(prm.T, prm.dt);
  if (rcase == ReductionCase::CrowdOde) {
    ModelSpec m = detail::decoupled_scalar_model(prm.lambda, prm.b);
    // refuse non-decoupled configurations
    std::vector<double> x{0.5}, y{0.0}, U{0.3}, alpha{0.1}, a(1);
    m.A(x, y, U, alpha, a);
    config_require(a[0] == 0.0, "scalar_reduction_check: A not decoupled");
    SolveResult run = solve_system(m, g, opt);
    double worst = 0;
    for (const auto& snap : run.snapshots) {
      double exact =
          prm.lambda > 0
              ? prm.b * (1.0 - std::exp(-prm.lambda * snap.t)) / prm.lambda
              : prm.b * snap.t;
      for (double v : snap.U) worst = std::max(worst, std::abs(v - exact));
    }
    return worst;
  }
  // PenaltyRelaxation: frozen dynamics, phi0 = psi + gap0, Ubar = 0, U0 = 1.
  ModelSpec m = detail::decoupled_scalar_model(0.0, 0.0);
  m.U0 = [](span_c, span_c, span_m u) { u[0] = 1.0; };
  double gap0 = prm.gap0;
  m.phi0 = [gap0](span_c, span_c) { return gap0; };
  StoppingSpec stop;
  stop.psi = [](span_c, span_c) { return 0.0; };
  stop.Ubar = [](span_c, span_c, span_m u) { u[0] = 0.0; };
  stop.epsilon = prm.eps;
  SolveResult run = solve_penalized(m, g, stop, opt);
  double worst = 0;
  for (const auto& snap : run.snapshots) {
    double decay = std::exp(-snap.t / prm.eps);
    for (double v : snap.phi)
      worst = std::max(worst, std::abs(v - prm.gap0 * decay));
    for (double v : snap.U) worst = std::max(worst, std::abs(v - decay));
  }
  return worst;
}

}  // namespace mfgm
