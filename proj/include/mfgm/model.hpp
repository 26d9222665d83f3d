#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfgm/common.hpp"
#include "mfgm/grid.hpp"

namespace mfgm {

using span_c = std::span<const double>;
using span_m = std::span<double>;

/// Major-player Hamiltonian F(x, y, U, p, alpha) -> real.
using HamiltonianFn = std::function<double(span_c, span_c, span_c, span_c, span_c)>;
/// grad_p F(x, y, U, p, alpha) -> R^d (written into the last argument).
using GradPFn = std::function<void(span_c, span_c, span_c, span_c, span_c, span_m)>;
/// Crowd coupling A(x, y, U, alpha) -> R^k.
using CouplingFn = std::function<void(span_c, span_c, span_c, span_m)>;
/// Initial crowd data U0(x, y) -> R^k.
using CrowdInitFn = std::function<void(span_c, span_c, span_m)>;
/// Initial major data phi0(x, y) -> real.
using ScalarInitFn = std::function<double(span_c, span_c)>;

namespace detail {
// Coupling handles take (x, y, U, alpha); we pack alpha behind U via a
// 4-argument functional so both A and B share one signature.
}

/// A and B take (x, y, U, alpha) and write k reals.
using InteractionFn =
    std::function<void(span_c, span_c, span_c, span_c, span_m)>;

/// All problem data of the coupled major-player / master-equation system:
/// rates, Hamiltonian, interactions, initial data.
struct ModelSpec {
  int k = 0;  // crowd state count
  int d = 0;  // major state dimension
  double nu = 0;      // major noise intensity
  double rho = 0;     // major discount
  double lambda = 0;  // crowd discount

  HamiltonianFn F;
  GradPFn gradpF;  // optional; empty -> finite-difference fallback
  InteractionFn A;
  InteractionFn B;
  CrowdInitFn U0;
  ScalarInitFn phi0;
};

/// Stopping cost, post-stop crowd cost and intensity bound for the
/// penalized / obstacle formulations.
struct StoppingSpec {
  std::function<double(span_c, span_c)> psi;
  CrowdInitFn Ubar;
  double epsilon = 0.01;
};

/// Central finite-difference gradient of F in p, step 1e-5 * (1 + |p|).
inline void fd_gradpF(const ModelSpec& spec, span_c x, span_c y, span_c U,
                      span_c p, span_c alpha, span_m out,
                      std::vector<double>& p_scratch) {
  double pnorm = sup_norm(p);
  double hp = 1e-5 * (1.0 + pnorm);
  p_scratch.assign(p.begin(), p.end());
  span_m ps(p_scratch);
  for (int j = 0; j < spec.d; ++j) {
    double pj = p[j];
    ps[j] = pj + hp;
    double fp = spec.F(x, y, U, ps, alpha);
    ps[j] = pj - hp;
    double fm = spec.F(x, y, U, ps, alpha);
    ps[j] = pj;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw EvalError("fd_gradpF: non-finite F evaluation near p[" +
                      std::to_string(j) + "] = " + std::to_string(pj));
    out[j] = (fp - fm) / (2.0 * hp);
  }
}

/// grad_p F: supplied handle if present, finite-difference fallback otherwise.
inline void eval_gradpF(const ModelSpec& spec, span_c x, span_c y, span_c U,
                        span_c p, span_c alpha, span_m out,
                        std::vector<double>& p_scratch) {
  if (spec.gradpF) {
    spec.gradpF(x, y, U, p, alpha, out);
    for (int j = 0; j < spec.d; ++j)
      if (!std::isfinite(out[j]))
        throw EvalError("eval_gradpF: supplied gradient returned a non-finite value");
    return;
  }
  fd_gradpF(spec, x, y, U, p, alpha, out, p_scratch);
}

/// Structural "lead-taking" couplings: the major player can inhibit the
/// crowd's control (multiplicative form) or gate it off entirely on a region
/// (gated form).
struct StructuredCrowdDynamics {
  enum class Form { MultiplicativeAlpha, Gated };
  Form form = Form::MultiplicativeAlpha;

  /// Crowd-controlled part, (x, y, U) -> R^k.
  std::function<void(span_c, span_c, span_c, span_m)> Atilde;
  /// Autonomous drift, x -> R^k.
  std::function<void(span_c, span_m)> V;
  /// Gate, (x, y) -> nonnegative real (gated form).
  std::function<double(span_c, span_c)> G;
  /// Major-imposed drift, (alpha, x) -> R^k (gated form).
  std::function<void(span_c, span_c, span_m)> Cmaj;
  /// Inhibition factor, alpha -> nonnegative real (multiplicative form).
  std::function<double(span_c)> a;
};

/// Builds the coupling A(x, y, U, alpha) from a structural form.
/// Multiplicative: A = a(alpha) * Atilde + V, with A == V(x) bitwise when
/// a(alpha) = 0. Gated: A = G(x, y) * Atilde + Cmaj, independent of U where
/// the gate is closed.
inline InteractionFn build_coupling(const StructuredCrowdDynamics& sdyn) {
  using Form = StructuredCrowdDynamics::Form;
  if (sdyn.form == Form::MultiplicativeAlpha) {
    config_require(static_cast<bool>(sdyn.Atilde) && static_cast<bool>(sdyn.V) &&
                       static_cast<bool>(sdyn.a),
                   "build_coupling: multiplicative form needs Atilde, V and a");
    config_require(!sdyn.Cmaj, "build_coupling: Cmaj is a gated-form handle");
    auto Atilde = sdyn.Atilde;
    auto V = sdyn.V;
    auto a = sdyn.a;
    return [Atilde, V, a](span_c x, span_c y, span_c U, span_c alpha, span_m out) {
      V(x, out);
      double s = a(alpha);
      if (s == 0.0) return;  // exactly the autonomous drift
      static thread_local std::vector<double> tmp;
      tmp.resize(out.size());
      Atilde(x, y, U, tmp);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * tmp[i];
    };
  }
  config_require(static_cast<bool>(sdyn.Atilde) && static_cast<bool>(sdyn.G) &&
                     static_cast<bool>(sdyn.Cmaj),
                 "build_coupling: gated form needs Atilde, G and Cmaj");
  config_require(!sdyn.a, "build_coupling: a is a multiplicative-form handle");
  auto Atilde = sdyn.Atilde;
  auto G = sdyn.G;
  auto Cmaj = sdyn.Cmaj;
  return [Atilde, G, Cmaj](span_c x, span_c y, span_c U, span_c alpha, span_m out) {
    Cmaj(alpha, x, out);
    double g = G(x, y);
    if (g == 0.0) return;  // gate closed: no U dependence
    static thread_local std::vector<double> tmp;
    tmp.resize(out.size());
    Atilde(x, y, U, tmp);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g * tmp[i];
  };
}

struct ModelValidation {
  bool mass_conserving = false;
  double gradp_fd_error = 0;  // only meaningful when gradpF supplied
  std::vector<std::string> notes;
};

namespace detail {
inline void sample_point(SplitMix64& rng, const GridSpec* g, int k, int d,
                         std::vector<double>& x, std::vector<double>& y) {
  x.resize(k);
  y.resize(d);
  for (int i = 0; i < k; ++i)
    x[i] = g ? rng.uniform(g->x_min[i], g->x_max[i]) : rng.uniform(0.0, 2.0);
  for (int j = 0; j < d; ++j)
    y[j] = g ? rng.uniform(g->y_min[j], g->y_max[j]) : rng.uniform(-2.0, 2.0);
}
}  // namespace detail

/// Checks invariants and samples the couplings for finiteness. Detects (does
/// not assume) mass conservation of A. Throws ValidationError naming the
/// offending field.
inline ModelValidation validate_model(const ModelSpec& spec,
                                      const GridSpec* grid = nullptr,
                                      int samples = 64,
                                      std::uint64_t seed = 12345) {
  if (spec.k < 1) throw ValidationError("k must be >= 1");
  if (spec.d < 1) throw ValidationError("d must be >= 1");
  if (!(spec.nu > 0)) throw ValidationError("nu must be positive");
  if (!(spec.rho >= 0)) throw ValidationError("rho must be nonnegative");
  if (!(spec.lambda >= 0)) throw ValidationError("lambda must be nonnegative");
  if (!spec.F) throw ValidationError("F handle missing");
  if (!spec.A) throw ValidationError("A handle missing");
  if (!spec.B) throw ValidationError("B handle missing");
  if (!spec.U0) throw ValidationError("U0 handle missing");
  if (!spec.phi0) throw ValidationError("phi0 handle missing");

  ModelValidation report;
  SplitMix64 rng(seed);
  std::vector<double> x, y, U(spec.k), p(spec.d), alpha(spec.d, 0.0);
  std::vector<double> a(spec.k), b(spec.k), gsup(spec.d), gfd(spec.d), pscr;
  bool mass = true;
  double worst_fd = 0;
  for (int s = 0; s < samples; ++s) {
    detail::sample_point(rng, grid, spec.k, spec.d, x, y);
    spec.U0(x, y, U);
    if (!all_finite(U)) throw EvalError("U0 returned a non-finite value");
    double ph = spec.phi0(x, y);
    if (!std::isfinite(ph)) throw EvalError("phi0 returned a non-finite value");
    for (int j = 0; j < spec.d; ++j) p[j] = rng.uniform(-2.0, 2.0);
    for (int j = 0; j < spec.d; ++j) alpha[j] = rng.uniform(-1.0, 1.0);
    double f = spec.F(x, y, U, p, alpha);
    if (!std::isfinite(f)) throw EvalError("F returned a non-finite value");
    spec.A(x, y, U, alpha, a);
    if (!all_finite(a)) throw EvalError("A returned a non-finite value");
    spec.B(x, y, U, alpha, b);
    if (!all_finite(b)) throw EvalError("B returned a non-finite value");
    double sum = 0, scale = 0;
    for (int i = 0; i < spec.k; ++i) {
      sum += a[i];
      scale = std::max(scale, std::abs(a[i]));
    }
    if (std::abs(sum) > 1e-12 * std::max(1.0, scale)) mass = false;
    if (spec.gradpF) {
      spec.gradpF(x, y, U, p, alpha, gsup);
      fd_gradpF(spec, x, y, U, p, alpha, gfd, pscr);
      double scale_g = std::max({1.0, sup_norm(gsup), sup_norm(gfd)});
      for (int j = 0; j < spec.d; ++j)
        worst_fd = std::max(worst_fd, std::abs(gsup[j] - gfd[j]) / scale_g);
    }
  }
  report.mass_conserving = mass;
  report.gradp_fd_error = worst_fd;
  if (spec.gradpF && worst_fd > 1e-6)
    throw ValidationError(
        "gradpF disagrees with finite-difference fallback (relative error " +
        std::to_string(worst_fd) + ")");
  report.notes.push_back(mass ? "coupling A is mass-conserving on samples"
                              : "coupling A is not mass-conserving");
  return report;
}

}  // namespace mfgm
