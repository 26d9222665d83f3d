#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mfgm/fixedpoint.hpp"

using namespace mfgm;

namespace {

// Scalar model with grad_p F = p + c * alpha, whose Nash control is
// alpha* = p / (1 - c).
ModelSpec lq_control_model(double c) {
  ModelSpec m;
  m.k = 1;
  m.d = 1;
  m.nu = 0.05;
  m.lambda = 1.0;
  m.F = [c](span_c, span_c, span_c, span_c p, span_c alpha) {
    double r = p[0] + c * alpha[0];
    return 0.5 * r * r;
  };
  m.gradpF = [c](span_c, span_c, span_c, span_c p, span_c alpha, span_m g) {
    g[0] = p[0] + c * alpha[0];
  };
  return m;
}

}  // namespace

TEST_CASE("damped Picard solves the LQ control to closed form") {
  ModelSpec m = lq_control_model(0.5);
  FixedPointOptions opt;
  std::vector<double> x{1.0}, y{0.0}, U{0.0}, gs, ps;
  SplitMix64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p{rng.uniform(-3.0, 3.0)};
    std::vector<double> alpha{0.0};
    auto out = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
    REQUIRE(out.converged);
    CHECK(out.residual <= 1e-10);
    CHECK(std::abs(alpha[0] - p[0] / (1.0 - 0.5)) <= 1e-9);
  }
}

TEST_CASE("warm starts shorten the iteration") {
  ModelSpec m = lq_control_model(0.5);
  FixedPointOptions opt;
  std::vector<double> x{1.0}, y{0.0}, U{0.0}, p{1.0}, gs, ps;
  std::vector<double> alpha{0.0};
  auto cold = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
  auto warm = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
  CHECK(warm.iterations < cold.iterations);
  CHECK(warm.iterations <= 2);
}

TEST_CASE("stall detection tightens the damping") {
  // grad_p F = p - 3.5 alpha: at theta = 0.5 the Picard map has factor
  // -1.25 and diverges; the stall path must drop theta to 0.1 and converge
  // to alpha* = p / 4.5.
  ModelSpec m;
  m.k = 1;
  m.d = 1;
  m.nu = 0.05;
  m.F = [](span_c, span_c, span_c, span_c p, span_c alpha) {
    return p[0] * alpha[0];
  };
  m.gradpF = [](span_c, span_c, span_c, span_c p, span_c alpha, span_m g) {
    g[0] = p[0] - 3.5 * alpha[0];
  };
  FixedPointOptions opt;
  opt.max_iter = 2000;
  std::vector<double> x{1.0}, y{0.0}, U{0.0}, p{0.9}, alpha{0.0}, gs, ps;
  auto out = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
  REQUIRE(out.converged);
  CHECK(std::abs(alpha[0] - 0.9 / 4.5) <= 1e-9);
}

TEST_CASE("non-convergence aborts unless accepted") {
  ModelSpec m;
  m.k = 1;
  m.d = 1;
  m.nu = 0.05;
  m.F = [](span_c, span_c, span_c, span_c, span_c) { return 0.0; };
  // No fixed point: g(alpha) = alpha + 1.
  m.gradpF = [](span_c, span_c, span_c, span_c, span_c alpha, span_m g) {
    g[0] = alpha[0] + 1.0;
  };
  FixedPointOptions opt;
  opt.max_iter = 50;
  std::vector<double> x{1.0}, y{0.0}, U{0.0}, p{0.0}, alpha{0.0}, gs, ps;
  CHECK_THROWS_AS(solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps),
                  ConvergenceError);
  opt.accept_failure = true;
  alpha[0] = 0.0;
  auto out = solve_alpha_star(m, x, y, U, p, alpha, opt, gs, ps);
  CHECK_FALSE(out.converged);
  CHECK(out.residual > 0.5);
}

TEST_CASE("bang-bang stopping intensity") {
  std::vector<double> phi{1.0, 0.5, 0.5 + 1e-13, 0.2};
  std::vector<double> psi{0.5, 0.5, 0.5, 0.5};
  std::vector<double> beta(4);
  compute_beta_star(phi, psi, 0.01, 1e-12, beta);
  CHECK(beta[0] == 100.0);
  CHECK(beta[1] == 0.0);  // exact tie
  CHECK(beta[2] == 0.0);  // inside the tie band
  CHECK(beta[3] == 0.0);
  CHECK_THROWS_AS(compute_beta_star(phi, psi, 0.0, 1e-12, beta), ConfigError);
}
