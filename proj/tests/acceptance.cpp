// End-to-end acceptance suite. Each numbered check prints one PASS/FAIL
// line; the process exits nonzero if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfgm/mfgm.hpp"

using namespace mfgm;
namespace fs = std::filesystem;

namespace {

const std::string kScenarioDir = MFGM_SCENARIO_DIR;

int g_failures = 0;

void report(int num, bool ok, const std::string& what,
            const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", num,
              what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string num_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Scenario load(const std::string& name) {
  return load_scenario(kScenarioDir + "/" + name);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool dirs_byte_identical(const fs::path& a, const fs::path& b,
                         std::string& why) {
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(a))
    names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    std::ifstream fa(a / name, std::ios::binary);
    std::ifstream fb(b / name, std::ios::binary);
    if (!fb.good()) {
      why = name.string() + " missing in rerun";
      return false;
    }
    std::string sa((std::istreambuf_iterator<char>(fa)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)),
                   std::istreambuf_iterator<char>());
    if (sa != sb) {
      why = name.string() + " differs";
      return false;
    }
    if (sa.empty()) {
      why = name.string() + " is empty";
      return false;
    }
  }
  why = std::to_string(names.size()) + " files identical";
  return !names.empty();
}

std::vector<double> grid_psi(const GridSpec& g, const StoppingSpec& stop) {
  std::vector<double> psi(g.num_nodes), x(g.k), y(g.d);
  for (std::size_t node = 0; node < g.num_nodes; ++node) {
    g.node_coords(node, x, y);
    psi[node] = stop.psi(x, y);
  }
  return psi;
}

struct SharedRuns {
  double worst_fp_residual = 0;
  long fp_failures = 0;
  int scenarios_run = 0;
  std::optional<std::string> first_error;
  double sweep_seconds = 0;
  std::optional<LambdaSweepResult> lam;
  std::optional<EpsilonSweepResult> eps;
  std::optional<RefinementResult> refine;
  std::optional<SolveResult> penalized, obstacle, nostop;
  Scenario pen_scenario, obs_scenario;

  void fold(const RunDiagnostics& d) {
    worst_fp_residual = std::max(worst_fp_residual, d.max_fp_residual);
    fp_failures += d.fp_failures;
  }
};

// Runs every shipped scenario through the library with the abort fixed-point
// policy, keeping the results the later criteria reuse.
SharedRuns run_shipped_scenarios() {
  SharedRuns sh;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(kScenarioDir))
    if (e.path().extension() == ".cfg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    try {
      Scenario s = load_scenario(file.string());
      ModelSpec m = build_model(s);
      GridSpec g = s.grid();
      SolverOptions opt = s.solver();
      switch (s.mode) {
        case RunMode::System: {
          sh.fold(solve_system(m, g, opt).diag);
          break;
        }
        case RunMode::Myopic: {
          sh.fold(solve_myopic(m, g, opt).diag);
          break;
        }
        case RunMode::Penalized: {
          StoppingSpec stop = build_stopping(s);
          SolveResult run = solve_penalized(m, g, stop, opt);
          sh.fold(run.diag);
          sh.penalized = std::move(run);
          sh.pen_scenario = s;
          break;
        }
        case RunMode::Obstacle: {
          StoppingSpec stop = build_stopping(s);
          SolveResult run = solve_obstacle(m, g, stop, opt);
          sh.fold(run.diag);
          if (file.filename() == "lq_obstacle.cfg") {
            sh.obstacle = std::move(run);
            sh.obs_scenario = s;
          }
          break;
        }
        case RunMode::LambdaSweep: {
          auto t0 = std::chrono::steady_clock::now();
          auto res = lambda_sweep(m, g, s.lambdas, s.window_start(), opt);
          sh.sweep_seconds = elapsed_s(t0);
          sh.worst_fp_residual =
              std::max(sh.worst_fp_residual, res.max_fp_residual);
          sh.lam = std::move(res);
          break;
        }
        case RunMode::EpsilonSweep: {
          StoppingSpec stop = build_stopping(s);
          auto res = epsilon_sweep(m, g, stop, s.epsilons, opt);
          sh.fold(res.obstacle_run.diag);
          sh.eps = std::move(res);
          break;
        }
        case RunMode::Refine: {
          auto res = refinement_study(m, g, s.levels, Engine::Mode::System,
                                      nullptr, opt);
          sh.refine = std::move(res);
          break;
        }
        case RunMode::Oracle: {
          run_oracle(s);
          break;
        }
      }
      ++sh.scenarios_run;
    } catch (const std::exception& e) {
      if (!sh.first_error)
        sh.first_error = file.filename().string() + ": " + e.what();
    }
  }
  // The no-stopping reference for the penalized comparison.
  if (sh.penalized) {
    Scenario s = sh.pen_scenario;
    ModelSpec m = build_model(s);
    SolveResult run = solve_system(m, s.grid(), s.solver());
    sh.fold(run.diag);
    sh.nostop = std::move(run);
  }
  return sh;
}

void criterion_1(const SharedRuns& sh) {
  // Closed form of the LQ Nash control: alpha* = p / (1 - c), c = 0.5.
  Scenario s;
  s.model = "lq";
  s.params["c"] = 0.5;
  ModelSpec m = build_model(s);
  FixedPointOptions opt;
  SplitMix64 rng(2024);
  std::vector<double> x{1.0, 1.0}, y{0.0}, U{0.0, 0.0}, gs, ps;
  double worst_gap = 0;
  bool converged = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p{rng.uniform(-3.0, 3.0)};
    std::vector<double> alpha{0.0};
    auto out = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
    converged = converged && out.converged && out.residual <= 1e-10;
    worst_gap = std::max(worst_gap, std::abs(alpha[0] - p[0] / 0.5));
  }
  bool scenarios_ok = !sh.first_error && sh.worst_fp_residual <= 1e-10 &&
                      sh.fp_failures == 0;
  std::string detail = "closed-form gap " + num_str(worst_gap) +
                       ", scenario residual " + num_str(sh.worst_fp_residual);
  if (sh.first_error) detail += ", error: " + *sh.first_error;
  report(1, converged && worst_gap <= 1e-9 && scenarios_ok,
         "fixed-point correctness", detail);
}

void criterion_2() {
  ReductionParams ode;
  ode.lambda = 10.0;
  ode.b = 1.0;
  ReductionParams pen;
  pen.eps = 0.1;
  double e1 = scalar_reduction_check(ReductionCase::CrowdOde, ode);
  double p1 = scalar_reduction_check(ReductionCase::PenaltyRelaxation, pen);
  ode.dt = 5e-4;
  pen.dt = 5e-4;
  double e2 = scalar_reduction_check(ReductionCase::CrowdOde, ode);
  double p2 = scalar_reduction_check(ReductionCase::PenaltyRelaxation, pen);
  bool ok = e1 < 5e-3 && p1 < 5e-3 && e2 >= 0.4 * e1 && e2 <= 0.6 * e1 &&
            p2 >= 0.4 * p1 && p2 <= 0.6 * p1;
  report(2, ok, "scalar-reduction oracles",
         "ode " + num_str(e1) + "->" + num_str(e2) + ", penalty " +
             num_str(p1) + "->" + num_str(p2));
}

void criterion_3(const SharedRuns& sh) {
  if (!sh.lam) {
    report(3, false, "myopic limit sweep", "sweep scenario did not run");
    return;
  }
  const auto& r = *sh.lam;
  bool mono_u = true, mono_gap = true;
  for (std::size_t i = 1; i < r.u_norm.norms.size(); ++i) {
    mono_u = mono_u && r.u_norm.norms[i] < r.u_norm.norms[i - 1];
    mono_gap = mono_gap && r.phi_gap.norms[i] < r.phi_gap.norms[i - 1];
  }
  bool ok = r.u_norm.norms.size() == 4 && mono_u && mono_gap &&
            r.u_norm.slope <= -0.8 && sh.sweep_seconds < 300.0;
  report(3, ok, "myopic limit sweep",
         "U slope " + num_str(r.u_norm.slope) + ", gap slope " +
             num_str(r.phi_gap.slope) + ", " + num_str(sh.sweep_seconds) + " s");
}

void criterion_4() {
  // Multiplicative form, a(alpha) = |alpha|^2 = 0: trajectory equals the
  // pure-V transport.
  StructuredCrowdDynamics sd;
  sd.form = StructuredCrowdDynamics::Form::MultiplicativeAlpha;
  sd.Atilde = [](span_c, span_c, span_c U, span_m out) {
    out[0] = U[1] - U[0];
    out[1] = U[0] - U[1];
  };
  sd.V = [](span_c x, span_m out) {
    out[0] = x[1] - x[0];
    out[1] = x[0] - x[1];
  };
  sd.a = [](span_c alpha) {
    double s = 0;
    for (double v : alpha) s += v * v;
    return s;
  };
  auto A = build_coupling(sd);
  InteractionFn pure_v = [&sd](span_c x, span_c, span_c, span_c, span_m out) {
    sd.V(x, out);
  };
  std::vector<double> x0{1.4, 0.3}, y{0.2}, U{0.7, -0.4}, zero{0.0};
  std::vector<double> times{0.25, 0.5, 0.75, 1.0};
  auto full = trace_characteristic(A, 2, x0, y, U, zero, times);
  auto ref = trace_characteristic(pure_v, 2, x0, y, U, zero, times);
  double gap = 0;
  for (std::size_t i = 0; i < full.hist.size(); ++i)
    gap = std::max(gap, std::abs(full.hist[i] - ref.hist[i]));

  // Gated form, G = 0 below the gate: the flux there is independent of U.
  Scenario gs;
  gs.model = "gated";
  gs.params["gate_center"] = 1.0;
  ModelSpec gm = build_model(gs);
  SplitMix64 rng(5);
  double flux_gap = 0;
  std::vector<double> base(2), got(2), alpha{0.3};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x{rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0)};
    std::vector<double> yy{rng.uniform(-2.0, 2.0)};
    std::vector<double> U0{0.0, 0.0};
    std::vector<double> Ur{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    gm.A(x, yy, U0, alpha, base);
    gm.A(x, yy, Ur, alpha, got);
    flux_gap = std::max({flux_gap, std::abs(got[0] - base[0]),
                         std::abs(got[1] - base[1])});
  }
  report(4, gap <= 1e-12 && flux_gap == 0.0, "lead-taking structural forms",
         "multiplicative gap " + num_str(gap) + ", gated flux gap " +
             num_str(flux_gap));
}

void criterion_5(const SharedRuns& sh) {
  if (!sh.penalized || !sh.nostop) {
    report(5, false, "penalized bang-bang structure", "runs missing");
    return;
  }
  const auto& pen = *sh.penalized;
  const Scenario& s = sh.pen_scenario;
  const double cap = 1.0 / s.epsilon;
  bool bang = true;
  for (double b : pen.beta) bang = bang && (b == 0.0 || b == cap);
  double tie_max = 0;
  for (double f : pen.diag.tie_fraction) tie_max = std::max(tie_max, f);

  std::size_t quiet = 0, active = 0;
  double u_gap = 0;
  for (std::size_t node = 0; node < pen.beta_ever_positive.size(); ++node) {
    if (pen.beta_ever_positive[node]) {
      ++active;
      continue;
    }
    ++quiet;
    for (std::size_t c = 0; c < 2; ++c) {
      std::size_t at = c * pen.beta_ever_positive.size() + node;
      u_gap = std::max(u_gap, std::abs(pen.U[at] - sh.nostop->U[at]));
    }
  }
  bool ok = bang && tie_max < 0.01 && quiet > 0 && active > 0 && u_gap <= 1e-12;
  report(5, ok, "penalized bang-bang structure",
         "tie fraction " + num_str(tie_max) + ", quiet-node U gap " +
             num_str(u_gap) + ", active nodes " + std::to_string(active));
}

// Scheme-error estimate for the obstacle scenario: one refinement whose fine
// level is exactly the desk grid, so the level difference estimates the desk
// discretization error.
double obstacle_scheme_error(const Scenario& desk) {
  Scenario coarse = desk;
  coarse.n_x = {11, 11};
  coarse.n_y = {21};
  coarse.dt = 2.0 * desk.dt;
  ModelSpec m = build_model(coarse);
  StoppingSpec stop = build_stopping(coarse);
  auto res = refinement_study(m, coarse.grid(), 2, Engine::Mode::Obstacle,
                              &stop, coarse.solver());
  return res.level_diffs.empty() ? -1.0 : res.level_diffs[0];
}

void criterion_6(const SharedRuns& sh, double scheme_err) {
  if (!sh.eps) {
    report(6, false, "penalization limit", "epsilon sweep did not run");
    return;
  }
  const auto& r = *sh.eps;
  bool mono = r.overshoot.norms.size() == 3 &&
              r.overshoot.norms[1] < r.overshoot.norms[0] &&
              r.overshoot.norms[2] < r.overshoot.norms[1];
  bool slope_ok = std::abs(r.overshoot.slope - 1.0) <= 0.3;
  double gap_finest = r.obstacle_gap.norms.empty() ? 1e9
                                                   : r.obstacle_gap.norms.back();
  bool gap_ok = scheme_err > 0 && gap_finest <= 10.0 * scheme_err;
  report(6, mono && slope_ok && gap_ok, "penalization limit",
         "overshoot slope " + num_str(r.overshoot.slope) + ", finest gap " +
             num_str(gap_finest) + ", scheme error " + num_str(scheme_err));
}

void criterion_7(const SharedRuns& sh, double scheme_err) {
  if (!sh.obstacle || !sh.obstacle->obstacle) {
    report(7, false, "obstacle complementarity", "obstacle run missing");
    return;
  }
  const auto& run = *sh.obstacle;
  const auto& rep = *run.obstacle;
  GridSpec g = sh.obs_scenario.grid();
  StoppingSpec stop = build_stopping(sh.obs_scenario);
  std::vector<double> psi = grid_psi(g, stop);

  double off_residual = 0;
  for (std::size_t node = 0; node < g.num_nodes; ++node)
    if (!rep.contact[node])
      off_residual = std::max(off_residual, rep.residual[node]);

  std::size_t contact_nodes = 0;
  double ubar_gap = 0;
  for (std::size_t node = 0; node < g.num_nodes; ++node) {
    if (run.phi[node] != psi[node]) continue;
    ++contact_nodes;
    for (std::size_t c = 0; c < 2; ++c) {
      double want = sh.obs_scenario.ubar_value;
      ubar_gap = std::max(ubar_gap,
                          std::abs(run.U[c * g.num_nodes + node] - want));
    }
  }
  bool ok = rep.max_violation <= 1e-12 && contact_nodes > 0 && ubar_gap == 0.0 &&
            scheme_err > 0 && off_residual <= 10.0 * scheme_err;
  report(7, ok, "obstacle complementarity",
         "violation " + num_str(rep.max_violation) + ", off-contact residual " +
             num_str(off_residual) + ", contact nodes " +
             std::to_string(contact_nodes));
}

void criterion_8() {
  std::vector<double> Q{-1.0, 1.0, 1.0, -1.0};
  std::vector<double> x0{1.0, 0.0};
  std::vector<double> times{0.2, 0.4, 0.6, 0.8, 1.0};

  // Characteristics from the solver-side coupling.
  RateMatrixCoupling rc;
  rc.k = 2;
  rc.Q = [&Q](span_c, span_c, span_c, span_c, span_m out) {
    std::copy(Q.begin(), Q.end(), out.begin());
  };
  auto A = coupling_from_rate_matrix(rc);
  std::vector<double> y{0.0}, U{0.0, 0.0}, alpha{0.0};
  auto ref = trace_characteristic(A, 2, x0, y, U, alpha, times);

  const long N = 100000;
  auto mc = particle_simulate(Q, 2, x0, times, N, 424242, 2);
  double worst_sigma = 0;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    for (int c = 0; c < 2; ++c) {
      double q = ref.at(ti, c);
      double se = std::sqrt(q * (1.0 - q) / static_cast<double>(N));
      worst_sigma = std::max(worst_sigma, std::abs(mc.at(ti, c) - q) / se);
    }
  }

  // Monte Carlo error slope over N: RMS of the sup error over 32 replicates.
  std::vector<double> Ns{1e3, 1e4, 1e5}, errs;
  for (double dN : Ns) {
    long n = static_cast<long>(dN);
    double acc = 0;
    const int reps = 32;
    for (int rep = 0; rep < reps; ++rep) {
      auto h = particle_simulate(Q, 2, x0, times, n,
                                 1000 + static_cast<std::uint64_t>(rep), 2);
      double sup = 0;
      for (std::size_t ti = 0; ti < times.size(); ++ti)
        for (int c = 0; c < 2; ++c)
          sup = std::max(sup, std::abs(h.at(ti, c) - ref.at(ti, c)));
      acc += sup * sup;
    }
    errs.push_back(std::sqrt(acc / reps));
  }
  double slope = fit_loglog_slope(Ns, errs);
  bool ok = worst_sigma < 3.0 && std::abs(slope + 0.5) <= 0.15;
  report(8, ok, "transport oracle",
         "worst deviation " + num_str(worst_sigma) + " se, error slope " +
             num_str(slope));
}

void criterion_9(const SharedRuns& sh) {
  bool order_ok = sh.refine && sh.refine->levels_completed == 3 &&
                  std::abs(sh.refine->observed_order - 1.0) <= 0.3;

  // Mass conservation along oracle characteristics.
  Scenario s;
  s.model = "lq";
  ModelSpec m = build_model(s);
  std::vector<double> x0{1.3, 0.4}, y{0.5}, U{0.2, -0.1}, alpha{0.3};
  std::vector<double> times{0.25, 0.5, 0.75, 1.0};
  auto traj = trace_characteristic(m.A, 2, x0, y, U, alpha, times);
  double mass_drift = 0;
  for (std::size_t ti = 0; ti < times.size(); ++ti)
    mass_drift = std::max(
        mass_drift, std::abs(traj.at(ti, 0) + traj.at(ti, 1) - (x0[0] + x0[1])));

  // Monotone comparison: ordered initial data stay ordered.
  Scenario mc;
  mc.model = "lq";
  mc.params["p_weight"] = 0.0;
  mc.params["drive"] = 0.5;
  mc.n_x = {9, 9};
  mc.n_y = {9};
  mc.T = 0.5;
  mc.dt = 2e-3;
  ModelSpec lo_model = build_model(mc);
  ModelSpec hi_model = lo_model;
  lo_model.phi0 = [](span_c, span_c yv) {
    return 0.5 * std::exp(-yv[0] * yv[0]);
  };
  hi_model.phi0 = [](span_c, span_c yv) {
    return 0.2 + std::exp(-yv[0] * yv[0]);
  };
  GridSpec g = mc.grid();
  Engine lo(lo_model, g, {}, Engine::Mode::System);
  Engine hi(hi_model, g, {}, Engine::Mode::System);
  bool ordered = true;
  long nsteps = std::lround(g.T / g.dt);
  for (long step = 0; step < nsteps && ordered; ++step) {
    ordered = lo.advance() && hi.advance();
    for (std::size_t i = 0; i < g.num_nodes && ordered; ++i)
      ordered = lo.phi()[i] <= hi.phi()[i] + 1e-13;
  }

  bool ok = order_ok && mass_drift <= 1e-12 && ordered;
  report(9, ok, "scheme sanity",
         "order " + (sh.refine ? num_str(sh.refine->observed_order)
                               : std::string("n/a")) +
             ", mass drift " + num_str(mass_drift) + ", ordered " +
             (ordered ? "yes" : "no"));
}

void criterion_10() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"quick_system.cfg", "quick_obstacle.cfg"}) {
    Scenario s = load(name);
    fs::path base = fs::temp_directory_path() / "mfgm_acceptance";
    fs::path a = base / (std::string(name) + ".a");
    fs::path b = base / (std::string(name) + ".b");
    fs::remove_all(a);
    fs::remove_all(b);
    run_scenario(s, a.string());
    run_scenario(s, b.string());
    std::string why;
    bool same = dirs_byte_identical(a, b, why);
    ok = ok && same;
    if (!detail.empty()) detail += "; ";
    detail += std::string(name) + ": " + why;
  }
  report(10, ok, "reproducibility", detail);
}

}  // namespace

int main() {
  auto t0 = std::chrono::steady_clock::now();
  std::printf("running shipped scenarios from %s\n", kScenarioDir.c_str());
  SharedRuns sh = run_shipped_scenarios();
  std::printf("%d scenarios executed in %.1f s\n", sh.scenarios_run,
              elapsed_s(t0));
  std::fflush(stdout);

  double scheme_err = -1.0;
  if (sh.obstacle) {
    try {
      scheme_err = obstacle_scheme_error(sh.obs_scenario);
    } catch (const std::exception& e) {
      std::printf("scheme error estimate failed: %s\n", e.what());
    }
  }

  criterion_1(sh);
  criterion_2();
  criterion_3(sh);
  criterion_4();
  criterion_5(sh);
  criterion_6(sh, scheme_err);
  criterion_7(sh, scheme_err);
  criterion_8();
  criterion_9(sh);
  criterion_10();

  std::printf("total %.1f s, %d failure(s)\n", elapsed_s(t0), g_failures);
  return g_failures == 0 ? 0 : 1;
}
