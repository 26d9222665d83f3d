#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mfgm/limits.hpp"
#include "mfgm/oracle.hpp"
#include "mfgm/scenario.hpp"
#include "mfgm/stopping.hpp"

namespace mfgm {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CflCertificate {
  double bound_A = 0;      // sup over nodes of sum_i |A_i| / h_xi
  double bound_alpha = 0;  // sup over nodes of sum_j |alpha_j| / h_yj
  double dt_max = 0;
};

/// Samples the transport speeds over the whole grid at the initial data
/// (U = U0, alpha solved from the phi0 gradient) and returns the explicit
/// transport step bound. Runs refuse dt above it.
inline CflCertificate cfl_certificate(const ModelSpec& spec,
                                      const GridSpec& grid,
                                      const SolverOptions& opt = {}) {
  const int k = spec.k, d = spec.d;
  const std::size_t N = grid.num_nodes;
  std::vector<double> phi0(N), x(k), y(d);
  for (std::size_t node = 0; node < N; ++node) {
    grid.node_coords(node, x, y);
    phi0[node] = spec.phi0(x, y);
  }
  FixedPointOptions fpo{opt.tol_fp, opt.theta, opt.max_iter, true};
  CflCertificate cert;
  std::vector<double> U(k), p(d), alpha(d, 0.0), A(k), gs, ps;
  for (std::size_t node = 0; node < N; ++node) {
    grid.node_coords(node, x, y);
    spec.U0(x, y, U);
    for (int j = 0; j < d; ++j) {
      int axis = k + j;
      p[j] = upwind_diff(phi0, node, grid.axis_index(node, axis), grid.n[axis],
                         grid.stride[axis], grid.h[axis], 0.0);
    }
    solve_alpha_star(spec, x, y, U, p, alpha, fpo, gs, ps);
    spec.A(x, y, U, alpha, A);
    double sa = 0, sal = 0;
    for (int i = 0; i < k; ++i) sa += std::abs(A[i]) / grid.h[i];
    for (int j = 0; j < d; ++j) sal += std::abs(alpha[j]) / grid.h[k + j];
    cert.bound_A = std::max(cert.bound_A, sa);
    cert.bound_alpha = std::max(cert.bound_alpha, sal);
  }
  cert.dt_max = cfl_max_dt(spec.nu, grid, cert.bound_A, cert.bound_alpha, true);
  return cert;
}

namespace detail {

inline void write_manifest(const Scenario& s, const std::string& path) {
  std::ofstream f(path);
  config_require(f.good(), "cannot write manifest '" + path + "'");
  auto num = [](double v) { return fmt_g(v); };
  auto list = [&](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out += (i ? "," : "") + fmt_g(v[i]);
    return out;
  };
  auto ilist = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  };
  f << "version = " << kVersion << "\n";
  f << "model = " << s.model << "\n";
  f << "mode = " << mode_name(s.mode) << "\n";
  for (const auto& [name, val] : s.params)
    f << "param." << name << " = " << num(val) << "\n";
  f << "nu = " << num(s.nu) << "\nrho = " << num(s.rho)
    << "\nlambda = " << num(s.lambda) << "\n";
  f << "x_min = " << list(s.x_min) << "\nx_max = " << list(s.x_max)
    << "\nn_x = " << ilist(s.n_x) << "\n";
  f << "y_min = " << list(s.y_min) << "\ny_max = " << list(s.y_max)
    << "\nn_y = " << ilist(s.n_y) << "\n";
  f << "T = " << num(s.T) << "\ndt = " << num(s.dt) << "\n";
  f << "tol_fp = " << num(s.tol_fp) << "\ntheta = " << num(s.theta)
    << "\nmax_iter = " << s.max_iter << "\ntie_tol = " << num(s.tie_tol) << "\n";
  f << "snapshot_every = " << s.snapshot_every
    << "\nblowup_bound = " << num(s.blowup_bound)
    << "\nfp_policy = " << s.fp_policy << "\nt1 = " << num(s.window_start())
    << "\n";
  f << "epsilon = " << num(s.epsilon) << "\npsi_base = " << num(s.psi_base)
    << "\npsi_quad = " << num(s.psi_quad) << "\npsi_y = " << num(s.psi_y)
    << "\nubar_value = " << num(s.ubar_value) << "\n";
  f << "lambdas = " << list(s.lambdas) << "\nepsilons = " << list(s.epsilons)
    << "\nlevels = " << s.levels << "\n";
  f << "particles = " << s.particles << "\nrate = " << num(s.rate)
    << "\noracle_case = " << s.oracle_case << "\n";
  f << "seed = " << s.seed << "\nworkers = " << s.workers << "\n";
}

inline void write_diagnostics(const RunDiagnostics& d, const std::string& path) {
  std::ofstream f(path);
  bool penalized = !d.penalty_overshoot.empty();
  f << "t,sup_phi,sup_U,fp_residual_max";
  if (penalized) f << ",penalty_overshoot,tie_fraction";
  f << "\n";
  for (std::size_t i = 0; i < d.times.size(); ++i) {
    f << fmt_g(d.times[i]) << ',' << fmt_g(d.sup_phi[i]) << ','
      << fmt_g(d.sup_U[i]) << ',' << fmt_g(d.fp_residual_max[i]);
    if (penalized)
      f << ',' << fmt_g(d.penalty_overshoot[i]) << ','
        << fmt_g(d.tie_fraction[i]);
    f << "\n";
  }
  f << "# blowup_tripped=" << (d.blowup_tripped ? 1 : 0)
    << " effective_horizon=" << fmt_g(d.effective_horizon)
    << " fp_failures=" << d.fp_failures
    << " max_fp_residual=" << fmt_g(d.max_fp_residual) << "\n";
}

inline void write_snapshot(const GridSpec& g, const Snapshot& snap, int k,
                           const std::string& path) {
  std::ofstream f(path);
  auto list = [&](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out += (i ? ";" : "") + fmt_g(v[i]);
    return out;
  };
  auto ilist = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out += (i ? ";" : "") + std::to_string(v[i]);
    return out;
  };
  f << "# k=" << k << " d=" << g.d << " n_x=" << ilist(g.n_x)
    << " n_y=" << ilist(g.n_y) << " x_min=" << list(g.x_min)
    << " x_max=" << list(g.x_max) << " y_min=" << list(g.y_min)
    << " y_max=" << list(g.y_max) << " t=" << fmt_g(snap.t) << "\n";
  f << "node,phi";
  for (int c = 0; c < k; ++c) f << ",U_" << c;
  f << "\n";
  for (std::size_t node = 0; node < g.num_nodes; ++node) {
    f << node << ',' << fmt_g(snap.phi[node]);
    for (int c = 0; c < k; ++c) {
      double u = snap.U.empty()
                     ? 0.0
                     : snap.U[static_cast<std::size_t>(c) * g.num_nodes + node];
      f << ',' << fmt_g(u);
    }
    f << "\n";
  }
}

inline void write_snapshots(const GridSpec& g, const SolveResult& run, int k,
                            const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "snapshot_%04zu.csv", i);
    write_snapshot(g, run.snapshots[i], k, (dir / name).string());
  }
}

inline void write_obstacle_report(const GridSpec& g, const ObstacleReport& rep,
                                  const std::string& path) {
  std::ofstream f(path);
  const int axes = g.k + g.d;
  f << "node";
  for (int a = 0; a < g.k; ++a) f << ",x_" << a;
  for (int a = 0; a < g.d; ++a) f << ",y_" << a;
  f << ",contact,residual\n";
  for (std::size_t node = 0; node < g.num_nodes; ++node) {
    f << node;
    for (int a = 0; a < axes; ++a)
      f << ',' << fmt_g(g.coord(a, g.axis_index(node, a)));
    f << ',' << int(rep.contact[node]) << ',' << fmt_g(rep.residual[node])
      << "\n";
  }
  f << "# max_violation=" << fmt_g(rep.max_violation)
    << " max_residual=" << fmt_g(rep.max_residual)
    << " contact_fraction=" << fmt_g(rep.contact_fraction)
    << " tol_c=" << fmt_g(rep.tol_c)
    << " boundary_nodes=" << rep.boundary_nodes.size() << "\n";
}

inline void write_sweep(const SweepResult& a, const char* name_a,
                        const SweepResult& b, const char* name_b,
                        const char* param_name, const std::string& path) {
  std::ofstream f(path);
  f << param_name << ',' << name_a << ',' << name_b << "\n";
  for (std::size_t i = 0; i < a.params.size(); ++i)
    f << fmt_g(a.params[i]) << ',' << fmt_g(a.norms[i]) << ','
      << fmt_g(b.norms[i]) << "\n";
  f << "# slope_" << name_a << "=" << fmt_g(a.slope) << " slope_" << name_b
    << "=" << fmt_g(b.slope) << " window_t1=" << fmt_g(a.t1)
    << " T=" << fmt_g(a.T) << "\n";
}

}  // namespace detail

/// Runs the oracle mode of a scenario; returns a short text report.
inline std::string run_oracle(const Scenario& s, std::string* csv = nullptr) {
  std::ostringstream rep, table;
  if (s.oracle_case == "crowd_ode" || s.oracle_case == "penalty_relaxation") {
    ReductionParams prm;
    prm.T = s.T;
    prm.dt = s.dt;
    prm.lambda = s.lambda;
    prm.eps = s.epsilon;
    auto rcase = s.oracle_case == "crowd_ode" ? ReductionCase::CrowdOde
                                              : ReductionCase::PenaltyRelaxation;
    double err = scalar_reduction_check(rcase, prm);
    rep << "scalar_reduction_check(" << s.oracle_case << "): sup error "
        << fmt_g(err) << "\n";
    table << "# case=" << s.oracle_case << " dt=" << fmt_g(s.dt) << "\n";
    table << "sup_error\n" << fmt_g(err) << "\n";
  } else {
    // transport: particle simulation vs forward ODE for the exchange rate
    // matrix at the scenario's rate.
    const int k = static_cast<int>(s.n_x.size());
    config_require(k >= 2, "oracle transport: need k >= 2");
    std::vector<double> Q(static_cast<std::size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        Q[static_cast<std::size_t>(i) * k + j] =
            i == j ? -s.rate : s.rate / (k - 1);
    std::vector<double> x0(k, 0.0);
    x0[0] = 1.0;
    std::vector<double> times{0.2 * s.T, 0.4 * s.T, 0.6 * s.T, 0.8 * s.T, s.T};
    auto mc = particle_simulate(Q, k, x0, times, s.particles, s.seed, s.workers);
    auto ode = ode_histogram(Q, k, x0, times);
    double worst_gap = 0, worst_sigma = 0;
    table << "# seed=" << s.seed << " N=" << s.particles << "\n";
    table << "t,component,mc,ode,stderr\n";
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      for (int c = 0; c < k; ++c) {
        double q = ode.at(ti, c);
        double se = std::sqrt(std::max(q * (1.0 - q), 0.0) /
                              static_cast<double>(s.particles));
        double gap = std::abs(mc.at(ti, c) - q);
        worst_gap = std::max(worst_gap, gap);
        if (se > 0) worst_sigma = std::max(worst_sigma, gap / se);
        table << fmt_g(times[ti]) << ',' << c << ',' << fmt_g(mc.at(ti, c))
              << ',' << fmt_g(q) << ',' << fmt_g(se) << "\n";
      }
    }
    rep << "particle_simulate vs ODE: worst gap " << fmt_g(worst_gap)
        << " (" << fmt_g(worst_sigma) << " standard errors)\n";
  }
  if (csv) *csv = table.str();
  return rep.str();
}

/// Executes a scenario and writes all artifacts into out_dir. Throws
/// ConfigError / ValidationError for refused configurations and solver
/// errors otherwise.
inline void run_scenario(const Scenario& s, const std::string& out_dir,
                         bool quiet = true) {
  namespace fs = std::filesystem;
  ModelSpec spec = build_model(s);
  GridSpec grid = s.grid();
  SolverOptions opt = s.solver();
  validate_model(spec, &grid, 64, s.seed + 1);

  fs::path dir(out_dir);
  fs::create_directories(dir);
  detail::write_manifest(s, (dir / "manifest.txt").string());

  bool needs_solver = s.mode != RunMode::Oracle;
  if (needs_solver) {
    CflCertificate cert = cfl_certificate(spec, grid, opt);
    config_require(grid.dt <= cert.dt_max,
                   "dt = " + fmt_g(grid.dt) + " violates the CFL certificate dt_max = " +
                       fmt_g(cert.dt_max));
  }

  auto log = [&](const std::string& msg) {
    if (!quiet) std::cout << msg << "\n";
  };

  switch (s.mode) {
    case RunMode::System:
    case RunMode::Myopic: {
      SolveResult run = s.mode == RunMode::System ? solve_system(spec, grid, opt)
                                                  : solve_myopic(spec, grid, opt);
      detail::write_diagnostics(run.diag, (dir / "diagnostics.csv").string());
      detail::write_snapshots(grid, run, spec.k, dir);
      log("run complete, effective horizon " + fmt_g(run.diag.effective_horizon));
      break;
    }
    case RunMode::Penalized:
    case RunMode::Obstacle: {
      StoppingSpec stop = build_stopping(s);
      double compat = ubar_compatibility_residual(spec, grid, stop, opt);
      if (compat > 1e-3)
        log("warning: Ubar compatibility residual " + fmt_g(compat) +
            " exceeds 1e-3 (post-stop cost is not a master-equation solution)");
      SolveResult run = s.mode == RunMode::Penalized
                            ? solve_penalized(spec, grid, stop, opt)
                            : solve_obstacle(spec, grid, stop, opt);
      detail::write_diagnostics(run.diag, (dir / "diagnostics.csv").string());
      detail::write_snapshots(grid, run, spec.k, dir);
      if (run.obstacle)
        detail::write_obstacle_report(grid, *run.obstacle,
                                      (dir / "obstacle_report.csv").string());
      log("run complete, effective horizon " + fmt_g(run.diag.effective_horizon));
      break;
    }
    case RunMode::LambdaSweep: {
      auto res = lambda_sweep(spec, grid, s.lambdas, s.window_start(), opt);
      detail::write_sweep(res.u_norm, "norm_U", res.phi_gap, "norm_phi_gap",
                          "lambda", (dir / "sweep.csv").string());
      log("lambda sweep complete, U-norm slope " + fmt_g(res.u_norm.slope));
      break;
    }
    case RunMode::EpsilonSweep: {
      StoppingSpec stop = build_stopping(s);
      auto res = epsilon_sweep(spec, grid, stop, s.epsilons, opt);
      detail::write_sweep(res.overshoot, "overshoot", res.obstacle_gap,
                          "obstacle_gap", "epsilon", (dir / "sweep.csv").string());
      if (res.obstacle_run.obstacle)
        detail::write_obstacle_report(grid, *res.obstacle_run.obstacle,
                                      (dir / "obstacle_report.csv").string());
      log("epsilon sweep complete, overshoot slope " + fmt_g(res.overshoot.slope));
      break;
    }
    case RunMode::Refine: {
      Engine::Mode emode = Engine::Mode::System;
      StoppingSpec stop = build_stopping(s);
      auto res = refinement_study(spec, grid, s.levels, emode, &stop, opt);
      std::ofstream f((dir / "refinement.csv").string());
      f << "level,nodes,diff_to_next\n";
      for (std::size_t i = 0; i < res.level_nodes.size(); ++i) {
        f << i << ',' << res.level_nodes[i] << ',';
        f << (i < res.level_diffs.size() ? fmt_g(res.level_diffs[i]) : "");
        f << "\n";
      }
      f << "# observed_order=" << fmt_g(res.observed_order)
        << " levels_completed=" << res.levels_completed << "\n";
      log("refinement complete, observed order " + fmt_g(res.observed_order));
      break;
    }
    case RunMode::Oracle: {
      std::string csv;
      std::string rep = run_oracle(s, &csv);
      std::ofstream f((dir / "oracle_report.csv").string());
      f << csv;
      log(rep);
      break;
    }
  }
}

/// Dry run: schema is already parsed; validates the model, prints the CFL
/// certificate, checks the supplied gradient against finite differences and
/// the Ubar compatibility diagnostic. Returns false on any hard failure.
inline bool check_scenario(const Scenario& s, std::ostream& out) {
  bool ok = true;
  try {
    ModelSpec spec = build_model(s);
    GridSpec grid = s.grid();
    auto report = validate_model(spec, &grid, 64, s.seed + 1);
    out << "model: ok (" << report.notes.front() << ")\n";
    if (spec.gradpF) {
      double err = fd_check_gradp(spec, 100, s.seed + 2);
      if (err < 1e-6) {
        out << "gradpF finite-difference check: ok (max relative error "
            << fmt_g(err) << ")\n";
      } else {
        out << "gradpF finite-difference check: FAIL (max relative error "
            << fmt_g(err) << ")\n";
        ok = false;
      }
    }
    if (s.mode != RunMode::Oracle) {
      CflCertificate cert = cfl_certificate(spec, grid, s.solver());
      out << "cfl: dt_max = " << fmt_g(cert.dt_max) << " (dt = " << fmt_g(grid.dt)
          << (grid.dt <= cert.dt_max ? ", ok)\n" : ", REFUSED)\n");
      if (grid.dt > cert.dt_max) ok = false;
    }
    if (s.mode == RunMode::Penalized || s.mode == RunMode::Obstacle ||
        s.mode == RunMode::EpsilonSweep) {
      StoppingSpec stop = build_stopping(s);
      double compat = ubar_compatibility_residual(spec, grid, stop, s.solver());
      out << "Ubar compatibility residual: " << fmt_g(compat)
          << (compat > 1e-3 ? " (warning: exceeds 1e-3)\n" : " (ok)\n");
    }
  } catch (const std::exception& e) {
    out << "check failed: " << e.what() << "\n";
    ok = false;
  }
  return ok;
}

}  // namespace mfgm
