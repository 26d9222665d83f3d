#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "mfgm/common.hpp"

namespace mfgm {

/// Truncated tensor grid over the crowd histogram box (k axes) and the major
/// state box (d axes). Axis order: x axes first, then y axes; the last axis
/// varies fastest in the flat node index, so for d = 1 every y-line is
/// contiguous.
struct GridSpec {
  std::vector<double> x_min, x_max;
  std::vector<int> n_x;
  std::vector<double> y_min, y_max;
  std::vector<int> n_y;
  double T = 1.0;
  double dt = 1e-3;

  // Derived, filled by finalize().
  int k = 0, d = 0;
  std::vector<double> lo, hi, h;   // per axis, size k + d
  std::vector<int> n;              // nodes per axis
  std::vector<std::size_t> stride; // flat-index stride per axis
  std::size_t num_nodes = 0;

  void finalize() {
    k = static_cast<int>(n_x.size());
    d = static_cast<int>(n_y.size());
    config_require(k >= 1, "grid: at least one x dimension required");
    config_require(d >= 1, "grid: at least one y dimension required");
    config_require(x_min.size() == n_x.size() && x_max.size() == n_x.size(),
                   "grid: x_min/x_max/n_x size mismatch");
    config_require(y_min.size() == n_y.size() && y_max.size() == n_y.size(),
                   "grid: y_min/y_max/n_y size mismatch");
    config_require(T > 0, "grid: T must be positive");
    config_require(dt > 0, "grid: dt must be positive");

    int axes = k + d;
    lo.resize(axes);
    hi.resize(axes);
    n.resize(axes);
    h.resize(axes);
    for (int i = 0; i < k; ++i) {
      config_require(x_min[i] >= 0 && x_min[i] < x_max[i],
                     "grid: need 0 <= x_min < x_max componentwise");
      config_require(n_x[i] >= 2, "grid: n_x must be >= 2 per dimension");
      lo[i] = x_min[i];
      hi[i] = x_max[i];
      n[i] = n_x[i];
    }
    for (int j = 0; j < d; ++j) {
      config_require(y_min[j] < y_max[j], "grid: need y_min < y_max");
      config_require(n_y[j] >= 2, "grid: n_y must be >= 2 per dimension");
      lo[k + j] = y_min[j];
      hi[k + j] = y_max[j];
      n[k + j] = n_y[j];
    }
    for (int a = 0; a < axes; ++a) h[a] = (hi[a] - lo[a]) / (n[a] - 1);

    stride.assign(axes, 1);
    for (int a = axes - 2; a >= 0; --a)
      stride[a] = stride[a + 1] * static_cast<std::size_t>(n[a + 1]);
    num_nodes = stride[0] * static_cast<std::size_t>(n[0]);
  }

  double coord(int axis, int idx) const { return lo[axis] + h[axis] * idx; }

  int axis_index(std::size_t node, int axis) const {
    return static_cast<int>((node / stride[axis]) % static_cast<std::size_t>(n[axis]));
  }

  void multi_index(std::size_t node, std::span<int> idx) const {
    for (int a = 0; a < k + d; ++a) idx[a] = axis_index(node, a);
  }

  /// Fills x (size k) and y (size d) with the coordinates of a node.
  void node_coords(std::size_t node, std::span<double> x, std::span<double> y) const {
    for (int a = 0; a < k; ++a) x[a] = coord(a, axis_index(node, a));
    for (int a = 0; a < d; ++a) y[a] = coord(k + a, axis_index(node, k + a));
  }
};

struct ScalarField {
  std::vector<double> values;
  explicit ScalarField(const GridSpec& g) : values(g.num_nodes, 0.0) {}
  ScalarField() = default;
};

/// k values per node, component-major: component c occupies the block
/// [c * num_nodes, (c + 1) * num_nodes).
struct CrowdField {
  int k = 0;
  std::vector<double> values;
  CrowdField(const GridSpec& g, int k_) : k(k_), values(g.num_nodes * static_cast<std::size_t>(k_), 0.0) {}
  CrowdField() = default;
  std::span<double> component(std::size_t num_nodes, int c) {
    return {values.data() + static_cast<std::size_t>(c) * num_nodes, num_nodes};
  }
  std::span<const double> component(std::size_t num_nodes, int c) const {
    return {values.data() + static_cast<std::size_t>(c) * num_nodes, num_nodes};
  }
};

/// Single-node upwind difference along one axis. Backward where drift > 0,
/// forward where drift < 0, central where drift = 0. Where the upwind
/// neighbor falls outside the grid (an inflow face of the truncation box)
/// the ghost node copies the boundary value, so the difference is zero;
/// reading the interior neighbor instead would be anti-monotone and would
/// widen the stencil's domain of dependence in the wrong direction. The
/// drift-free case stays one-sided at the boundary.
inline double upwind_diff(std::span<const double> v, std::size_t node, int idx,
                          int n, std::size_t stride, double h, double drift) {
  if (drift > 0) return idx == 0 ? 0.0 : (v[node] - v[node - stride]) / h;
  if (drift < 0) return idx == n - 1 ? 0.0 : (v[node + stride] - v[node]) / h;
  if (idx == 0) return (v[node + stride] - v[node]) / h;
  if (idx == n - 1) return (v[node] - v[node - stride]) / h;
  return (v[node + stride] - v[node - stride]) / (2.0 * h);
}

/// Whole-field upwind gradient along one axis with a per-node drift.
inline void upwind_grad(const GridSpec& g, std::span<const double> v, int axis,
                        std::span<const double> drift, std::span<double> out) {
  const int n = g.n[axis];
  const std::size_t s = g.stride[axis];
  const double h = g.h[axis];
  for (std::size_t node = 0; node < g.num_nodes; ++node)
    out[node] = upwind_diff(v, node, g.axis_index(node, axis), n, s, h, drift[node]);
}

/// Second difference over all y axes with homogeneous Neumann closure
/// (ghost-node mirroring) at the truncation boundary. x axes untouched.
inline void laplacian_y(const GridSpec& g, std::span<const double> v, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int j = 0; j < g.d; ++j) {
    const int axis = g.k + j;
    const int n = g.n[axis];
    config_require(n >= 3, "laplacian_y: need n_y >= 3 per y dimension");
    const std::size_t s = g.stride[axis];
    const double inv_h2 = 1.0 / (g.h[axis] * g.h[axis]);
    for (std::size_t node = 0; node < g.num_nodes; ++node) {
      int idx = g.axis_index(node, axis);
      double lap;
      if (idx == 0)
        lap = 2.0 * (v[node + s] - v[node]) * inv_h2;
      else if (idx == n - 1)
        lap = 2.0 * (v[node - s] - v[node]) * inv_h2;
      else
        lap = (v[node + s] - 2.0 * v[node] + v[node - s]) * inv_h2;
      out[node] += lap;
    }
  }
}

/// Explicit-transport CFL certificate. bound_A and bound_alpha are the
/// grid-sampled sup norms of sum_i |A_i| / h_xi and sum_j |alpha_j| / h_yj.
/// With implicit diffusion the nu term drops out; with everything zero the
/// step is unconstrained and the horizon is returned.
inline double cfl_max_dt(double nu, const GridSpec& g, double bound_A,
                         double bound_alpha, bool implicit_diffusion = true) {
  double denom = bound_A + bound_alpha;
  if (!implicit_diffusion) {
    double diff = 0;
    for (int j = 0; j < g.d; ++j) {
      double hy = g.h[g.k + j];
      diff += 2.0 * nu / (hy * hy);
    }
    denom += diff;
  }
  if (denom <= 0) return g.T;
  return 1.0 / denom;
}

/// Workspace for the implicit (backward Euler) diffusion solve along y-lines.
/// The tridiagonal coefficients are constant per axis, so the forward
/// elimination multipliers are precomputed once.
struct DiffusionSolver {
  const GridSpec* g = nullptr;
  double nu_dt = 0;
  // Per y axis: precomputed c' of the Thomas algorithm and line starts.
  std::vector<std::vector<double>> cprime;
  std::vector<std::vector<std::size_t>> line_starts;

  void setup(const GridSpec& grid, double nu, double dt) {
    g = &grid;
    nu_dt = nu * dt;
    cprime.assign(grid.d, {});
    line_starts.assign(grid.d, {});
    if (nu_dt <= 0) return;
    for (int j = 0; j < grid.d; ++j) {
      const int axis = grid.k + j;
      const int n = grid.n[axis];
      config_require(n >= 3, "implicit diffusion: need n_y >= 3 per y dimension");
      const double r = nu_dt / (grid.h[axis] * grid.h[axis]);
      auto& cp = cprime[j];
      cp.resize(n);
      // Rows: [1+2r, -2r], interior [-r, 1+2r, -r], [-2r, 1+2r].
      cp[0] = -2.0 * r / (1.0 + 2.0 * r);
      for (int i = 1; i < n - 1; ++i)
        cp[i] = -r / (1.0 + 2.0 * r + r * cp[i - 1]);
      cp[n - 1] = 0.0;
      auto& ls = line_starts[j];
      for (std::size_t node = 0; node < grid.num_nodes; ++node)
        if (grid.axis_index(node, axis) == 0) ls.push_back(node);
    }
  }

  /// In-place backward Euler step (I - nu*dt*Lap_y) v_new = v for one field.
  void apply(std::span<double> v, int workers = 1) const {
    if (nu_dt <= 0) return;
    for (int j = 0; j < g->d; ++j) {
      const int axis = g->k + j;
      const int n = g->n[axis];
      const std::size_t s = g->stride[axis];
      const double r = nu_dt / (g->h[axis] * g->h[axis]);
      const auto& cp = cprime[j];
      const auto& ls = line_starts[j];
      parallel_for(ls.size(), workers, [&](std::size_t b, std::size_t e) {
        std::vector<double> dp(static_cast<std::size_t>(n));
        for (std::size_t li = b; li < e; ++li) {
          const std::size_t base = ls[li];
          dp[0] = v[base] / (1.0 + 2.0 * r);
          for (int i = 1; i < n - 1; ++i) {
            double denom = 1.0 + 2.0 * r + r * cp[i - 1];
            dp[i] = (v[base + s * static_cast<std::size_t>(i)] + r * dp[i - 1]) / denom;
          }
          {
            double denom = 1.0 + 2.0 * r + 2.0 * r * cp[n - 2];
            dp[n - 1] = (v[base + s * static_cast<std::size_t>(n - 1)] + 2.0 * r * dp[n - 2]) / denom;
          }
          v[base + s * static_cast<std::size_t>(n - 1)] = dp[n - 1];
          for (int i = n - 2; i >= 0; --i) {
            std::size_t at = base + s * static_cast<std::size_t>(i);
            v[at] = dp[i] - cp[i] * v[at + s];
          }
        }
      });
    }
  }
};

}  // namespace mfgm
