#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "mfgm/common.hpp"
#include "mfgm/fixedpoint.hpp"
#include "mfgm/grid.hpp"
#include "mfgm/model.hpp"

namespace mfgm {

struct SolverOptions {
  double tol_fp = 1e-10;
  double theta = 0.5;
  int max_iter = 200;
  double tie_tol = 1e-12;
  double blowup_bound = 1e8;
  int snapshot_every = 100;
  int workers = 1;
  bool accept_fp_failure = false;
};

/// Per-run observability: residuals, norms and the empirically observed
/// validity horizon (frozen early if the blow-up guard trips).
struct RunDiagnostics {
  std::vector<double> times;
  std::vector<double> sup_phi;
  std::vector<double> sup_U;
  std::vector<double> fp_residual_max;       // per step
  std::vector<double> penalty_overshoot;     // sup (phi - psi)^+, penalized runs
  std::vector<double> tie_fraction;          // |phi - psi| <= tie_tol fraction
  double max_fp_residual = 0;
  long fp_failures = 0;
  bool blowup_tripped = false;
  double effective_horizon = 0;
};

struct Snapshot {
  double t = 0;
  std::vector<double> phi;
  std::vector<double> U;  // component-major, k * num_nodes
};

/// Complementarity diagnostics for the obstacle formulation.
struct ObstacleReport {
  std::vector<std::uint8_t> contact;
  std::vector<double> residual;      // |max(phi - psi, pde_residual)| per node
  double max_violation = 0;          // max (phi - psi)^+ over nodes
  double max_residual = 0;
  double contact_fraction = 0;
  std::vector<std::size_t> boundary_nodes;
  double tol_c = 1e-12;
};

/// residual_i = |max(phi_i - psi_i, pde_residual_i)|; contact where
/// |phi - psi| <= tol_c. Boundary nodes are contact nodes with a non-contact
/// axis neighbor.
inline ObstacleReport complementarity_residual(const GridSpec& g, span_c phi,
                                               span_c psi, span_c pde_residual,
                                               double tol_c = 1e-12) {
  ObstacleReport rep;
  rep.tol_c = tol_c;
  const std::size_t N = g.num_nodes;
  rep.contact.resize(N);
  rep.residual.resize(N);
  std::size_t ncontact = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double gap = phi[i] - psi[i];
    rep.contact[i] = std::abs(gap) <= tol_c ? 1 : 0;
    ncontact += rep.contact[i];
    rep.residual[i] = std::abs(std::max(gap, pde_residual[i]));
    rep.max_residual = std::max(rep.max_residual, rep.residual[i]);
    rep.max_violation = std::max(rep.max_violation, gap);
  }
  rep.max_violation = std::max(rep.max_violation, 0.0);
  rep.contact_fraction = static_cast<double>(ncontact) / static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i) {
    if (!rep.contact[i]) continue;
    bool boundary = false;
    for (int a = 0; a < g.k + g.d && !boundary; ++a) {
      int idx = g.axis_index(i, a);
      if (idx > 0 && !rep.contact[i - g.stride[a]]) boundary = true;
      if (idx < g.n[a] - 1 && !rep.contact[i + g.stride[a]]) boundary = true;
    }
    if (boundary) rep.boundary_nodes.push_back(i);
  }
  return rep;
}

/// One-step integrator for the coupled system, its myopic limit, and the
/// penalized / projected obstacle variants. IMEX splitting: explicit upwind
/// transport and sources, pointwise-implicit decay and penalty terms,
/// backward-Euler y-diffusion via tridiagonal line solves.
class Engine {
 public:
  enum class Mode { System, Myopic, Penalized, Obstacle };

  Engine(const ModelSpec& spec, const GridSpec& grid, const SolverOptions& opt,
         Mode mode, const StoppingSpec* stop = nullptr)
      : spec_(spec), grid_(grid), opt_(opt), mode_(mode) {
    N_ = grid_.num_nodes;
    k_ = spec_.k;
    d_ = spec_.d;
    config_require(k_ == grid_.k && d_ == grid_.d,
                   "engine: model dimensions do not match the grid");
    if (mode_ == Mode::Penalized || mode_ == Mode::Obstacle) {
      config_require(stop != nullptr, "engine: stopping spec required");
      stop_ = *stop;
      has_stop_ = true;
      if (mode_ == Mode::Penalized)
        config_require(stop_.epsilon > 0, "engine: epsilon must be positive");
    }
    diffusion_.setup(grid_, spec_.nu, grid_.dt);
    allocate();
    initialize();
  }

  double time() const { return t_; }
  bool frozen() const { return frozen_; }
  Mode mode() const { return mode_; }
  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& phi() const { return phi_; }
  const std::vector<double>& U() const { return U_; }
  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& beta() const { return beta_; }
  const std::vector<double>& psi_values() const { return psi_; }
  const std::vector<double>& ubar_values() const { return ubar_; }
  const std::vector<std::uint8_t>& contact() const { return contact_; }
  const std::vector<std::uint8_t>& beta_ever_positive() const { return beta_ever_; }
  const std::vector<double>& pde_residual() const { return pde_res_; }
  RunDiagnostics& diag() { return diag_; }
  const RunDiagnostics& diag() const { return diag_; }

  /// Refreshes the Nash controls from the current fields (also called
  /// internally at the start of every step).
  void refresh_controls() { solve_controls(); }

  /// Advances one time step. Returns false once the blow-up guard has
  /// tripped; the state is then frozen at the last valid time.
  bool advance() {
    if (frozen_) return false;
    solve_controls();
    stage_phi();
    if (mode_ != Mode::Myopic) stage_U();
    if (mode_ == Mode::Penalized) apply_penalty();
    if (mode_ == Mode::Obstacle) apply_projection();

    double sp = sup_norm(phi_next_);
    double su = (mode_ == Mode::Myopic) ? 0.0 : sup_norm(U_next_);
    if (sp > opt_.blowup_bound || su > opt_.blowup_bound ||
        !std::isfinite(sp) || !std::isfinite(su)) {
      frozen_ = true;
      diag_.blowup_tripped = true;
      diag_.effective_horizon = t_;
      return false;
    }
    phi_.swap(phi_next_);
    if (mode_ != Mode::Myopic) U_.swap(U_next_);
    t_ += grid_.dt;
    diag_.effective_horizon = t_;
    diag_.times.push_back(t_);
    diag_.sup_phi.push_back(sup_norm(phi_));
    diag_.sup_U.push_back(mode_ == Mode::Myopic ? 0.0 : sup_norm(U_));
    diag_.fp_residual_max.push_back(step_fp_residual_);
    return true;
  }

  ObstacleReport obstacle_report(double tol_c = 1e-12) const {
    return complementarity_residual(grid_, phi_, psi_, pde_res_, tol_c);
  }

 private:
  void allocate() {
    phi_.assign(N_, 0.0);
    phi_next_.assign(N_, 0.0);
    phi_exp_.assign(N_, 0.0);
    adv_phi_.assign(N_, 0.0);
    F_.assign(N_, 0.0);
    A_.assign(N_ * static_cast<std::size_t>(k_), 0.0);
    alpha_.assign(N_ * static_cast<std::size_t>(d_), 0.0);
    if (mode_ != Mode::Myopic) {
      U_.assign(N_ * static_cast<std::size_t>(k_), 0.0);
      U_next_.assign(N_ * static_cast<std::size_t>(k_), 0.0);
      B_.assign(N_ * static_cast<std::size_t>(k_), 0.0);
    }
    if (has_stop_) {
      psi_.assign(N_, 0.0);
      ubar_.assign(N_ * static_cast<std::size_t>(k_), 0.0);
      beta_.assign(N_, 0.0);
      beta_ever_.assign(N_, 0);
    }
    if (mode_ == Mode::Obstacle) {
      contact_.assign(N_, 0);
      pde_res_.assign(N_, 0.0);
      lap_.assign(N_, 0.0);
    }
    coords_.assign(N_ * static_cast<std::size_t>(k_ + d_), 0.0);
    for (std::size_t node = 0; node < N_; ++node) {
      span_m c(coords_.data() + node * static_cast<std::size_t>(k_ + d_),
               static_cast<std::size_t>(k_ + d_));
      grid_.node_coords(node, c.first(k_), c.subspan(k_));
    }
    zeroU_.assign(k_, 0.0);
  }

  void initialize() {
    std::vector<double> u0(k_);
    for (std::size_t node = 0; node < N_; ++node) {
      auto [x, y] = node_xy(node);
      phi_[node] = spec_.phi0(x, y);
      if (mode_ != Mode::Myopic) {
        spec_.U0(x, y, u0);
        for (int c = 0; c < k_; ++c) U_[cidx(c, node)] = u0[c];
      }
      if (has_stop_) {
        psi_[node] = stop_.psi(x, y);
        if (!std::isfinite(psi_[node]))
          throw EvalError("psi returned a non-finite value on the grid");
        stop_.Ubar(x, y, u0);
        if (!all_finite(u0))
          throw EvalError("Ubar returned a non-finite value on the grid");
        for (int c = 0; c < k_; ++c) ubar_[cidx(c, node)] = u0[c];
      }
    }
    config_require(all_finite(phi_), "phi0 produced non-finite values");
  }

  std::pair<span_c, span_c> node_xy(std::size_t node) const {
    const double* base = coords_.data() + node * static_cast<std::size_t>(k_ + d_);
    return {span_c(base, static_cast<std::size_t>(k_)),
            span_c(base + k_, static_cast<std::size_t>(d_))};
  }

  std::size_t cidx(int c, std::size_t node) const {
    return static_cast<std::size_t>(c) * N_ + node;
  }

  void solve_controls() {
    FixedPointOptions fpo{opt_.tol_fp, opt_.theta, opt_.max_iter,
                          opt_.accept_fp_failure};
    double worst = 0;
    long failures = 0;
    parallel_for(N_, opt_.workers, [&](std::size_t b, std::size_t e) {
      std::vector<double> Uv(k_), row(k_), p(d_), gs, ps;
      double local_worst = 0;
      long local_fail = 0;
      for (std::size_t node = b; node < e; ++node) {
        auto [x, y] = node_xy(node);
        span_c Uloc;
        if (mode_ == Mode::Myopic) {
          Uloc = span_c(zeroU_);
        } else {
          for (int c = 0; c < k_; ++c) Uv[c] = U_[cidx(c, node)];
          Uloc = span_c(Uv);
        }
        for (int j = 0; j < d_; ++j) {
          int axis = k_ + j;
          p[j] = upwind_diff(phi_, node, grid_.axis_index(node, axis),
                             grid_.n[axis], grid_.stride[axis], grid_.h[axis],
                             0.0);
        }
        span_m al(alpha_.data() + node * static_cast<std::size_t>(d_),
                  static_cast<std::size_t>(d_));
        auto outcome = solve_alpha_star(spec_, x, y, Uloc, p, al, fpo, gs, ps);
        local_worst = std::max(local_worst, outcome.residual);
        if (!outcome.converged) ++local_fail;
        F_[node] = spec_.F(x, y, Uloc, p, al);
        if (!std::isfinite(F_[node]))
          throw EvalError("F returned a non-finite value during a step");
        spec_.A(x, y, Uloc, al, row);
        for (int c = 0; c < k_; ++c) A_[cidx(c, node)] = row[c];
        if (mode_ != Mode::Myopic) {
          spec_.B(x, y, Uloc, al, row);
          for (int c = 0; c < k_; ++c) B_[cidx(c, node)] = row[c];
        }
      }
      // combine: per-chunk maxima folded after the parallel region would need
      // storage; a plain max under the small k_/d_ loop is fine since each
      // chunk touches disjoint nodes. Use atomic-free merge via local array.
      chunk_merge(local_worst, local_fail, worst, failures, b);
    });
    step_fp_residual_ = worst;
    diag_.max_fp_residual = std::max(diag_.max_fp_residual, worst);
    diag_.fp_failures += failures;
  }

  // Merges chunk-local reductions. Chunks are processed concurrently but the
  // merged quantities are order-independent (max and sum).
  void chunk_merge(double local_worst, long local_fail, double& worst,
                   long& failures, std::size_t) {
    std::lock_guard<std::mutex> lock(merge_mutex_);
    worst = std::max(worst, local_worst);
    failures += local_fail;
  }

  void stage_phi() {
    const double dt = grid_.dt;
    const double rho = spec_.rho;
    parallel_for(N_, opt_.workers, [&](std::size_t b, std::size_t e) {
      for (std::size_t node = b; node < e; ++node) {
        double adv = 0;
        for (int i = 0; i < k_; ++i) {
          double drift = A_[cidx(i, node)];
          adv += drift * upwind_diff(phi_, node, grid_.axis_index(node, i),
                                     grid_.n[i], grid_.stride[i], grid_.h[i],
                                     drift);
        }
        adv_phi_[node] = adv;
        phi_exp_[node] = (phi_[node] + dt * (-F_[node] - adv)) / (1.0 + dt * rho);
      }
    });
    std::copy(phi_exp_.begin(), phi_exp_.end(), phi_next_.begin());
    diffusion_.apply(phi_next_, opt_.workers);
  }

  void stage_U() {
    const double dt = grid_.dt;
    const double lambda = spec_.lambda;
    for (int c = 0; c < k_; ++c) {
      span_c Uc(U_.data() + cidx(c, 0), N_);
      span_m Un(U_next_.data() + cidx(c, 0), N_);
      parallel_for(N_, opt_.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t node = b; node < e; ++node) {
          double adv = 0;
          for (int i = 0; i < k_; ++i) {
            double drift = A_[cidx(i, node)];
            adv += drift * upwind_diff(Uc, node, grid_.axis_index(node, i),
                                       grid_.n[i], grid_.stride[i], grid_.h[i],
                                       drift);
          }
          for (int j = 0; j < d_; ++j) {
            int axis = k_ + j;
            double drift = alpha_[node * static_cast<std::size_t>(d_) + j];
            adv += drift * upwind_diff(Uc, node, grid_.axis_index(node, axis),
                                       grid_.n[axis], grid_.stride[axis],
                                       grid_.h[axis], drift);
          }
          Un[node] = (Uc[node] + dt * (-adv + B_[cidx(c, node)])) /
                     (1.0 + dt * lambda);
        }
      });
      diffusion_.apply(Un, opt_.workers);
    }
  }

  void apply_penalty() {
    const double dt = grid_.dt;
    compute_beta_star(phi_, psi_, stop_.epsilon, opt_.tie_tol, beta_);
    double overshoot = 0;
    std::size_t ties = 0;
    for (std::size_t node = 0; node < N_; ++node) {
      if (std::abs(phi_[node] - psi_[node]) <= opt_.tie_tol) ++ties;
      double bstar = beta_[node];
      if (bstar > 0) {
        beta_ever_[node] = 1;
        // implicit pointwise solve of phi' = -beta (phi - psi)^+
        if (phi_next_[node] > psi_[node])
          phi_next_[node] =
              psi_[node] + (phi_next_[node] - psi_[node]) / (1.0 + dt * bstar);
        // implicit pointwise solve of U' = -beta (U - Ubar)
        for (int c = 0; c < k_; ++c) {
          std::size_t at = cidx(c, node);
          U_next_[at] = (U_next_[at] + dt * bstar * ubar_[at]) / (1.0 + dt * bstar);
        }
      }
      overshoot = std::max(overshoot, phi_next_[node] - psi_[node]);
    }
    diag_.penalty_overshoot.push_back(std::max(overshoot, 0.0));
    diag_.tie_fraction.push_back(static_cast<double>(ties) /
                                 static_cast<double>(N_));
  }

  void apply_projection() {
    const double dt = grid_.dt;
    laplacian_y(grid_, phi_next_, lap_);
    for (std::size_t node = 0; node < N_; ++node) {
      bool on_contact = phi_next_[node] >= psi_[node];
      double projected = on_contact ? psi_[node] : phi_next_[node];
      contact_[node] = on_contact ? 1 : 0;
      // Discrete phi-operator applied to the converged fields: zero off the
      // contact set by construction, <= 0 on it (projection only lowers phi).
      pde_res_[node] = (projected - phi_[node]) / dt + F_[node] +
                       adv_phi_[node] + spec_.rho * phi_exp_[node] -
                       spec_.nu * lap_[node];
      phi_next_[node] = projected;
      if (on_contact)
        for (int c = 0; c < k_; ++c) U_next_[cidx(c, node)] = ubar_[cidx(c, node)];
    }
  }

  ModelSpec spec_;
  GridSpec grid_;
  SolverOptions opt_;
  Mode mode_;
  StoppingSpec stop_;
  bool has_stop_ = false;

  std::size_t N_ = 0;
  int k_ = 0, d_ = 0;
  double t_ = 0;
  bool frozen_ = false;
  double step_fp_residual_ = 0;

  std::vector<double> phi_, phi_next_, phi_exp_, adv_phi_, F_, A_, B_;
  std::vector<double> U_, U_next_;
  std::vector<double> alpha_, beta_, psi_, ubar_;
  std::vector<std::uint8_t> contact_, beta_ever_;
  std::vector<double> pde_res_, lap_;
  std::vector<double> coords_, zeroU_;
  DiffusionSolver diffusion_;
  RunDiagnostics diag_;
  std::mutex merge_mutex_;
};

struct SolveResult {
  std::vector<Snapshot> snapshots;
  RunDiagnostics diag;
  std::vector<double> phi, U, alpha, beta;
  std::vector<std::uint8_t> beta_ever_positive;
  std::optional<ObstacleReport> obstacle;
  double final_time = 0;
};

inline SolveResult run_engine(Engine& eng, const SolverOptions& opt) {
  const GridSpec& g = eng.grid();
  long nsteps = std::lround(g.T / g.dt);
  config_require(nsteps >= 1, "solve: T / dt must be at least one step");
  SolveResult result;
  auto capture = [&]() {
    Snapshot s;
    s.t = eng.time();
    s.phi = eng.phi();
    s.U = eng.U();
    result.snapshots.push_back(std::move(s));
  };
  capture();
  int cadence = std::max(1, opt.snapshot_every);
  for (long step = 1; step <= nsteps; ++step) {
    if (!eng.advance()) break;
    if (step % cadence == 0 || step == nsteps) capture();
  }
  if (!eng.frozen()) eng.refresh_controls();
  result.diag = eng.diag();
  result.phi = eng.phi();
  result.U = eng.U();
  result.alpha = eng.alpha();
  result.beta = eng.beta();
  result.beta_ever_positive = eng.beta_ever_positive();
  result.final_time = eng.time();
  if (eng.mode() == Engine::Mode::Obstacle)
    result.obstacle = eng.obstacle_report();
  return result;
}

/// Full coupled system, integrated forward from the t = 0 data.
inline SolveResult solve_system(const ModelSpec& spec, const GridSpec& grid,
                                const SolverOptions& opt = {}) {
  Engine eng(spec, grid, opt, Engine::Mode::System);
  return run_engine(eng, opt);
}

/// Myopic limit: U frozen at 0, only the major equation is integrated.
inline SolveResult solve_myopic(const ModelSpec& spec, const GridSpec& grid,
                                const SolverOptions& opt = {}) {
  Engine eng(spec, grid, opt, Engine::Mode::Myopic);
  return run_engine(eng, opt);
}

}  // namespace mfgm
