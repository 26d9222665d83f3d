#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfgm/common.hpp"
#include "mfgm/evolution.hpp"
#include "mfgm/model.hpp"

namespace mfgm {

enum class RunMode {
  System,
  Myopic,
  Penalized,
  Obstacle,
  LambdaSweep,
  EpsilonSweep,
  Refine,
  Oracle
};

inline RunMode parse_mode(const std::string& s) {
  if (s == "system") return RunMode::System;
  if (s == "myopic") return RunMode::Myopic;
  if (s == "penalized") return RunMode::Penalized;
  if (s == "obstacle") return RunMode::Obstacle;
  if (s == "lambda_sweep") return RunMode::LambdaSweep;
  if (s == "epsilon_sweep") return RunMode::EpsilonSweep;
  if (s == "refine") return RunMode::Refine;
  if (s == "oracle") return RunMode::Oracle;
  throw ConfigError("unknown mode '" + s + "'");
}

inline const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::System: return "system";
    case RunMode::Myopic: return "myopic";
    case RunMode::Penalized: return "penalized";
    case RunMode::Obstacle: return "obstacle";
    case RunMode::LambdaSweep: return "lambda_sweep";
    case RunMode::EpsilonSweep: return "epsilon_sweep";
    case RunMode::Refine: return "refine";
    case RunMode::Oracle: return "oracle";
  }
  return "?";
}

/// Fully resolved run configuration. Scenario files are plain-text
/// `key = value` lines; unknown keys are a hard error.
struct Scenario {
  std::string model;
  RunMode mode = RunMode::System;
  std::map<std::string, double> params;  // model overrides, `param.<name>`

  double nu = 0.05, rho = 0.0, lambda = 1.0;

  std::vector<double> x_min{0.0, 0.0}, x_max{2.0, 2.0};
  std::vector<int> n_x{21, 21};
  std::vector<double> y_min{-2.0}, y_max{2.0};
  std::vector<int> n_y{41};
  double T = 1.0, dt = 1e-3;

  double tol_fp = 1e-10, theta = 0.5, tie_tol = 1e-12, blowup_bound = 1e8;
  int max_iter = 200, snapshot_every = 100;
  std::string fp_policy = "abort";
  double t1 = -1.0;  // negative -> 0.1 * T

  double epsilon = 0.01;
  double psi_base = 0.5, psi_quad = 2.0, psi_y = 0.0, ubar_value = 0.1;

  std::vector<double> lambdas{1.0, 10.0, 100.0, 1000.0};
  std::vector<double> epsilons{0.1, 0.01, 0.001};
  int levels = 3;

  long particles = 100000;
  double rate = 1.0;
  std::string oracle_case = "transport";

  std::string out_dir;
  std::uint64_t seed = 0;
  int workers = 1;

  double window_start() const { return t1 < 0 ? 0.1 * T : t1; }

  GridSpec grid() const {
    GridSpec g;
    g.x_min = x_min;
    g.x_max = x_max;
    g.n_x = n_x;
    g.y_min = y_min;
    g.y_max = y_max;
    g.n_y = n_y;
    g.T = T;
    g.dt = dt;
    g.finalize();
    return g;
  }

  SolverOptions solver() const {
    SolverOptions o;
    o.tol_fp = tol_fp;
    o.theta = theta;
    o.max_iter = max_iter;
    o.tie_tol = tie_tol;
    o.blowup_bound = blowup_bound;
    o.snapshot_every = snapshot_every;
    o.workers = workers;
    o.accept_fp_failure = (fp_policy == "warn");
    return o;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_list(const std::string& v, int line) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    config_require(!tok.empty(), "line " + std::to_string(line) + ": empty list entry");
    std::size_t pos = 0;
    double val;
    try {
      val = std::stod(tok, &pos);
    } catch (...) {
      throw ConfigError("line " + std::to_string(line) + ": not a number: '" + tok + "'");
    }
    config_require(pos == tok.size(),
                   "line " + std::to_string(line) + ": not a number: '" + tok + "'");
    out.push_back(val);
  }
  config_require(!out.empty(), "line " + std::to_string(line) + ": empty value");
  return out;
}

inline double parse_num(const std::string& v, int line) {
  auto lst = parse_list(v, line);
  config_require(lst.size() == 1,
                 "line " + std::to_string(line) + ": expected a single number");
  return lst[0];
}

inline std::vector<int> parse_int_list(const std::string& v, int line) {
  auto lst = parse_list(v, line);
  std::vector<int> out;
  for (double x : lst) {
    config_require(x == std::floor(x),
                   "line " + std::to_string(line) + ": expected integers");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

}  // namespace detail

inline Scenario parse_scenario(std::istream& in) {
  Scenario s;
  bool have_model = false, have_mode = false;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string l = raw;
    auto hash = l.find('#');
    if (hash != std::string::npos) l = l.substr(0, hash);
    l = detail::trim(l);
    if (l.empty()) continue;
    auto eq = l.find('=');
    config_require(eq != std::string::npos,
                   "line " + std::to_string(line) + ": expected key = value");
    std::string key = detail::trim(l.substr(0, eq));
    std::string val = detail::trim(l.substr(eq + 1));
    config_require(!key.empty() && !val.empty(),
                   "line " + std::to_string(line) + ": expected key = value");
    using detail::parse_int_list;
    using detail::parse_list;
    using detail::parse_num;
    if (key == "model") { s.model = val; have_model = true; }
    else if (key == "mode") { s.mode = parse_mode(val); have_mode = true; }
    else if (key.rfind("param.", 0) == 0) {
      std::string name = key.substr(6);
      config_require(!name.empty(), "line " + std::to_string(line) + ": empty param name");
      s.params[name] = parse_num(val, line);
    }
    else if (key == "nu") s.nu = parse_num(val, line);
    else if (key == "rho") s.rho = parse_num(val, line);
    else if (key == "lambda") s.lambda = parse_num(val, line);
    else if (key == "x_min") s.x_min = parse_list(val, line);
    else if (key == "x_max") s.x_max = parse_list(val, line);
    else if (key == "n_x") s.n_x = parse_int_list(val, line);
    else if (key == "y_min") s.y_min = parse_list(val, line);
    else if (key == "y_max") s.y_max = parse_list(val, line);
    else if (key == "n_y") s.n_y = parse_int_list(val, line);
    else if (key == "T") s.T = parse_num(val, line);
    else if (key == "dt") s.dt = parse_num(val, line);
    else if (key == "tol_fp") s.tol_fp = parse_num(val, line);
    else if (key == "theta") s.theta = parse_num(val, line);
    else if (key == "max_iter") s.max_iter = static_cast<int>(parse_num(val, line));
    else if (key == "tie_tol") s.tie_tol = parse_num(val, line);
    else if (key == "blowup_bound") s.blowup_bound = parse_num(val, line);
    else if (key == "snapshot_every") s.snapshot_every = static_cast<int>(parse_num(val, line));
    else if (key == "fp_policy") {
      config_require(val == "abort" || val == "warn",
                     "line " + std::to_string(line) + ": fp_policy must be abort or warn");
      s.fp_policy = val;
    }
    else if (key == "t1") s.t1 = parse_num(val, line);
    else if (key == "epsilon") s.epsilon = parse_num(val, line);
    else if (key == "psi_base") s.psi_base = parse_num(val, line);
    else if (key == "psi_quad") s.psi_quad = parse_num(val, line);
    else if (key == "psi_y") s.psi_y = parse_num(val, line);
    else if (key == "ubar_value") s.ubar_value = parse_num(val, line);
    else if (key == "lambdas") s.lambdas = parse_list(val, line);
    else if (key == "epsilons") s.epsilons = parse_list(val, line);
    else if (key == "levels") s.levels = static_cast<int>(parse_num(val, line));
    else if (key == "particles") s.particles = static_cast<long>(parse_num(val, line));
    else if (key == "rate") s.rate = parse_num(val, line);
    else if (key == "oracle_case") {
      config_require(val == "transport" || val == "crowd_ode" || val == "penalty_relaxation",
                     "line " + std::to_string(line) + ": unknown oracle_case '" + val + "'");
      s.oracle_case = val;
    }
    else if (key == "out_dir") s.out_dir = val;
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(parse_num(val, line));
    else if (key == "workers") s.workers = static_cast<int>(parse_num(val, line));
    else throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
  }
  config_require(have_model, "scenario: missing required key 'model'");
  config_require(have_mode, "scenario: missing required key 'mode'");
  return s;
}

inline Scenario parse_scenario_text(const std::string& text) {
  std::istringstream ss(text);
  return parse_scenario(ss);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  config_require(f.good(), "cannot open scenario file '" + path + "'");
  return parse_scenario(f);
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

namespace detail {

inline double get_param(const std::map<std::string, double>& params,
                        const std::string& name, double dflt) {
  auto it = params.find(name);
  return it == params.end() ? dflt : it->second;
}

inline void check_param_names(const std::map<std::string, double>& params,
                              const std::set<std::string>& allowed,
                              const std::string& model) {
  for (const auto& [name, _] : params)
    config_require(allowed.count(name) > 0,
                   "model '" + model + "': unknown parameter '" + name + "'");
}

/// Complete-graph exchange drift: each unit of mass flows toward the other
/// states at the given rate. Mass conserving; equals rate * (x2 - x1, x1 - x2)
/// for k = 2.
inline void exchange_drift(span_c x, double rate, span_m out) {
  const int k = static_cast<int>(x.size());
  if (k < 2) {
    out[0] = 0.0;
    return;
  }
  double S = 0;
  for (double v : x) S += v;
  for (int i = 0; i < k; ++i) out[i] = rate * (S - k * x[i]) / (k - 1);
}

struct LqParams {
  double c, kappa, b, b_y, p_weight, drive, phi0_scale, phi0_x, exchange_rate,
      u0;
};

inline LqParams lq_params(const std::map<std::string, double>& p) {
  return LqParams{get_param(p, "c", 0.5),
                  get_param(p, "kappa", 0.1),
                  get_param(p, "b", 0.2),
                  get_param(p, "b_y", 0.0),
                  get_param(p, "p_weight", 1.0),
                  get_param(p, "drive", 0.0),
                  get_param(p, "phi0_scale", 1.0),
                  get_param(p, "phi0_x", 0.0),
                  get_param(p, "exchange_rate", 1.0),
                  get_param(p, "u0", 0.0)};
}

inline const std::set<std::string>& lq_param_names() {
  static const std::set<std::string> names{
      "c", "kappa", "b", "b_y", "p_weight", "drive",
      "phi0_scale", "phi0_x", "exchange_rate", "u0"};
  return names;
}

inline void fill_lq_core(ModelSpec& m, const LqParams& q,
                         const std::vector<double>& x_lo,
                         const std::vector<double>& x_hi) {
  const double c = q.c, kappa = q.kappa, w = q.p_weight, drive = q.drive;
  m.F = [c, kappa, w, drive](span_c x, span_c y, span_c U, span_c p, span_c alpha) {
    double quad = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      double r = p[j] + c * alpha[j];
      quad += r * r;
    }
    double coupling = 0;
    for (std::size_t i = 0; i < x.size(); ++i) coupling += x[i] * U[i];
    return 0.5 * w * quad + kappa * coupling - drive;
  };
  m.gradpF = [c, w](span_c, span_c, span_c, span_c p, span_c alpha, span_m g) {
    for (std::size_t j = 0; j < p.size(); ++j) g[j] = w * (p[j] + c * alpha[j]);
  };
  const double b = q.b, b_y = q.b_y;
  m.B = [b, b_y](span_c x, span_c y, span_c, span_c, span_m out) {
    double ysq = 0;
    for (double v : y) ysq += v * v;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = b * x[i] + b_y * ysq;
  };
  const double u0 = q.u0;
  m.U0 = [u0](span_c, span_c, span_m u) {
    for (auto& v : u) v = u0;
  };
  // The x-profile is a sine bump whose slope vanishes on the box faces, so
  // the inflow closure introduces no kink into the transported field.
  const double ps = q.phi0_scale, px = q.phi0_x;
  m.phi0 = [ps, px, x_lo, x_hi](span_c x, span_c y) {
    double ysq = 0;
    for (double v : y) ysq += v * v;
    double xb = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = std::sin(std::numbers::pi * (x[i] - x_lo[i]) / (x_hi[i] - x_lo[i]));
      xb += s * s;
    }
    return ps * std::exp(-ysq) + px * xb;
  };
}

}  // namespace detail

/// Builds a named built-in model sized to the scenario's grid dimensions.
/// Built-ins: "zero", "lq" (quadratic Hamiltonian, exchange coupling,
/// congestion cost), "multiplicative" and "gated" (lead-taking structural
/// forms), "lq_badgrad" (deliberately corrupted gradient, for diagnostics).
inline ModelSpec build_model(const Scenario& s) {
  ModelSpec m;
  m.k = static_cast<int>(s.n_x.size());
  m.d = static_cast<int>(s.n_y.size());
  m.nu = s.nu;
  m.rho = s.rho;
  m.lambda = s.lambda;

  if (s.model == "zero") {
    detail::check_param_names(s.params, {}, s.model);
    m.F = [](span_c, span_c, span_c, span_c, span_c) { return 0.0; };
    m.gradpF = [](span_c, span_c, span_c, span_c, span_c, span_m g) {
      for (auto& v : g) v = 0.0;
    };
    m.A = [](span_c, span_c, span_c, span_c, span_m a) {
      for (auto& v : a) v = 0.0;
    };
    m.B = [](span_c, span_c, span_c, span_c, span_m b) {
      for (auto& v : b) v = 0.0;
    };
    m.U0 = [](span_c, span_c, span_m u) {
      for (auto& v : u) v = 0.0;
    };
    m.phi0 = [](span_c, span_c) { return 0.0; };
    return m;
  }

  if (s.model == "lq" || s.model == "lq_badgrad") {
    detail::check_param_names(s.params, detail::lq_param_names(), s.model);
    auto q = detail::lq_params(s.params);
    detail::fill_lq_core(m, q, s.x_min, s.x_max);
    const double rate = q.exchange_rate;
    m.A = [rate](span_c x, span_c, span_c, span_c, span_m out) {
      detail::exchange_drift(x, rate, out);
    };
    if (s.model == "lq_badgrad") {
      const double c = q.c, w = q.p_weight;
      m.gradpF = [c, w](span_c, span_c, span_c, span_c p, span_c alpha, span_m g) {
        for (std::size_t j = 0; j < p.size(); ++j)
          g[j] = 1.1 * w * (p[j] + c * alpha[j]);
      };
    }
    return m;
  }

  if (s.model == "multiplicative") {
    auto names = detail::lq_param_names();
    names.insert("at");
    detail::check_param_names(s.params, names, s.model);
    auto q = detail::lq_params(s.params);
    detail::fill_lq_core(m, q, s.x_min, s.x_max);
    const double at = detail::get_param(s.params, "at", 0.5);
    const double rate = q.exchange_rate;
    StructuredCrowdDynamics sd;
    sd.form = StructuredCrowdDynamics::Form::MultiplicativeAlpha;
    sd.Atilde = [at](span_c x, span_c, span_c U, span_m out) {
      const int k = static_cast<int>(x.size());
      double S = 0;
      for (double v : U) S += v;
      for (int i = 0; i < k; ++i) out[i] = at * (S - k * U[i]) / (k - 1);
    };
    sd.V = [rate](span_c x, span_m out) { detail::exchange_drift(x, rate, out); };
    sd.a = [](span_c alpha) {
      double s2 = 0;
      for (double v : alpha) s2 += v * v;
      return s2;
    };
    m.A = build_coupling(sd);
    return m;
  }

  if (s.model == "gated") {
    auto names = detail::lq_param_names();
    names.insert("at");
    names.insert("cm");
    names.insert("gate_center");
    detail::check_param_names(s.params, names, s.model);
    auto q = detail::lq_params(s.params);
    detail::fill_lq_core(m, q, s.x_min, s.x_max);
    const double at = detail::get_param(s.params, "at", 0.5);
    const double cm = detail::get_param(s.params, "cm", 0.2);
    const double gate_center = detail::get_param(s.params, "gate_center", 1.0);
    StructuredCrowdDynamics sd;
    sd.form = StructuredCrowdDynamics::Form::Gated;
    sd.Atilde = [at](span_c x, span_c, span_c U, span_m out) {
      const int k = static_cast<int>(x.size());
      double S = 0;
      for (double v : U) S += v;
      for (int i = 0; i < k; ++i) out[i] = at * (S - k * U[i]) / (k - 1);
    };
    sd.G = [gate_center](span_c x, span_c) {
      double g = x[0] - gate_center;
      return g > 0 ? g * g : 0.0;
    };
    sd.Cmaj = [cm](span_c alpha, span_c x, span_m out) {
      detail::exchange_drift(x, cm * alpha[0], out);
    };
    m.A = build_coupling(sd);
    return m;
  }

  throw ConfigError("unknown model '" + s.model + "'");
}

/// Stopping data from the scenario keys: psi is lowest where the histogram
/// is balanced (contact forms around the diagonal), Ubar is a constant
/// post-stop cost.
inline StoppingSpec build_stopping(const Scenario& s) {
  StoppingSpec stop;
  const double base = s.psi_base, quad = s.psi_quad, py = s.psi_y;
  stop.psi = [base, quad, py](span_c x, span_c y) {
    const int k = static_cast<int>(x.size());
    double mean = 0;
    for (double v : x) mean += v;
    mean /= k;
    double dev = 0;
    for (double v : x) dev += (v - mean) * (v - mean);
    double ysq = 0;
    for (double v : y) ysq += v * v;
    return base + quad * dev + py * ysq;
  };
  const double uv = s.ubar_value;
  stop.Ubar = [uv](span_c, span_c, span_m u) {
    for (auto& v : u) v = uv;
  };
  stop.epsilon = s.epsilon;
  return stop;
}

}  // namespace mfgm
