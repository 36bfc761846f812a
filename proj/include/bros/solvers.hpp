#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bros/estimators.hpp"
#include "bros/haar.hpp"
#include "bros/moments.hpp"
#include "bros/problems.hpp"

namespace bros {

enum class Method { Bros, Masoba, NaiveStochastic, NaiveMeanField };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Bros: return "bros";
    case Method::Masoba: return "masoba";
    case Method::NaiveStochastic: return "naive-stochastic";
    case Method::NaiveMeanField: return "naive-meanfield";
  }
  return "unknown";
}

inline Method method_from_name(const std::string& s) {
  if (s == "bros") return Method::Bros;
  if (s == "masoba") return Method::Masoba;
  if (s == "naive-stochastic") return Method::NaiveStochastic;
  if (s == "naive-meanfield") return Method::NaiveMeanField;
  throw std::invalid_argument("unknown method: " + s);
}

struct SolverConfig {
  long iterations = 1000;
  double alpha = 0.1;
  bool alpha_auto = false;   // true: alpha = min(alpha_bar, 1/sqrt(K))
  double alpha_bar = 0.1;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;
  std::vector<int> ranks;    // per layer; ignored by the full-space baseline
  std::uint64_t seed = 0;
  double z_clip = 0.0;       // > 0 enables norm clipping of the Z update
  long eval_stride = 100;
  double divergence_guard = 1e12;
  bool track_grad_history = false;  // per-iteration exact |grad Phi| record
  bool track_z_history = false;     // per-iteration Z[0](0,0) record
  Vector x0;                 // empty means zeros

  double resolve_alpha() const {
    const double a = alpha_auto ? std::min(alpha_bar, 1.0 / std::sqrt(static_cast<double>(iterations))) : alpha;
    if (a < 0.0) throw std::invalid_argument("SolverConfig: negative stepsize");
    if (c1 <= 0.0 || c2 <= 0.0 || c3 <= 0.0) throw std::invalid_argument("SolverConfig: couplings must be positive");
    if (c3 * a > 1.0) throw std::invalid_argument("SolverConfig: c3 * alpha exceeds 1 (moving average weight)");
    return a;
  }
};

struct SolverState {
  Vector x;
  BlockVar y;
  BlockVar z;
  Vector h;
  long k = 0;
};

struct TrajectoryRecord {
  long k = 0;
  double grad_norm = 0.0;  // |grad Phi(x)| (exact when closed forms exist)
  double phi = 0.0;        // f(x, Y*(x))
  double f_xy = 0.0;       // f at the running iterates
  double y_err = 0.0;      // |Y - Y*(x)|
  double z_err = 0.0;      // |Z - Z*(x)|
  double h_err = 0.0;      // |h - grad Phi(x)|
  double wall_time = 0.0;  // seconds since the run started
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
};

struct RunResult {
  Trajectory trajectory;
  SolverState final_state;
  double resolved_alpha = 0.0;
  bool diverged = false;
  long diverged_at = -1;
  std::vector<double> grad_history;  // filled when track_grad_history is set
  std::vector<double> z_history;     // filled when track_z_history is set
};

inline SolverState initial_state(const BilevelProblem& problem, const SolverConfig& config) {
  SolverState st;
  st.x = config.x0.size() > 0 ? config.x0 : Vector::Zero(problem.d_x).eval();
  if (st.x.size() != problem.d_x) throw std::invalid_argument("initial_state: x0 dimension mismatch");
  st.y = BlockVar::zero(problem.shape);
  st.z = BlockVar::zero(problem.shape);
  st.h = Vector::Zero(problem.d_x);
  st.k = 0;
  return st;
}

// Residual norm of the implicit-gradient formula evaluated at tolerance-
// controlled lower/auxiliary solutions.
inline double stationarity_surrogate(const BilevelProblem& problem, const Vector& x, double tol = 1e-8) {
  return exact_hypergradient(problem, x, tol).norm();
}

namespace detail {

inline std::vector<int> resolve_ranks(const BilevelProblem& problem, const SolverConfig& config, Method method) {
  std::vector<int> ranks;
  if (method == Method::Masoba) {
    for (auto [m, n] : problem.shape.layers) ranks.push_back(m);
    return ranks;
  }
  if (static_cast<int>(config.ranks.size()) != problem.shape.num_layers())
    throw std::invalid_argument("solver: one rank per layer required");
  for (int l = 0; l < problem.shape.num_layers(); ++l) {
    const int r = config.ranks[l];
    if (r < 2 || r > problem.shape.rows(l)) throw std::invalid_argument("solver: ranks must satisfy 2 <= r <= m");
    ranks.push_back(r);
  }
  return ranks;
}

inline bool state_blown(const SolverState& st, double guard) {
  const double mag = st.x.norm() + norm(st.y) + norm(st.z) + st.h.norm();
  return !std::isfinite(mag) || mag > guard;
}

}  // namespace detail

// One iteration of the single-loop recursion (also the full-space and naive
// variants, which differ only in projector draw and Z direction):
//   x   <- x - alpha h                    (pre-update momentum)
//   Y   <- Y - c1 alpha P v
//   Z   <- Z - c2 alpha S                 (optional norm clip)
//   h   <- (1 - c3 alpha) h + c3 alpha w  (w formed with the pre-update Z)
inline void bros_step(const BilevelProblem& problem, const SolverConfig& config, Method method,
                      const std::vector<int>& ranks, const RngStream& run_stream, SolverState& st) {
  const double alpha = config.resolve_alpha();
  const double beta = config.c1 * alpha;
  const double gamma = config.c2 * alpha;
  const double theta = config.c3 * alpha;

  const RngStream iter = run_stream.child(st.k);
  const bool full_space = method == Method::Masoba;
  const ProjectorSet p = full_space ? identity_projector_set(problem.shape)
                                    : sample_projector_set(iter.child(0), problem.shape, ranks);
  const ProbeSet probes = sample_probe_set(iter.child(1), problem.shape,
                                           full_space ? detail::resolve_ranks(problem, config, Method::Masoba) : ranks);
  RngStream noise = iter.child(2);
  const OracleSample sample = sample_projected_oracles(problem, noise, st.x, st.y, p);

  BlockVar s_dir = method == Method::NaiveStochastic
                       ? axpy(-1.0, lift_up(p, sample.uy), naive_lifted_hvp(p, st.z, sample))
                       : build_aux_direction(p, st.z, sample, probes);
  if (config.z_clip > 0.0) {
    const double sn = norm(s_dir);
    if (sn > config.z_clip) s_dir = scale(config.z_clip / sn, s_dir);
  }
  const Vector w = build_hypergrad_sample(p, st.z, sample);

  st.x -= alpha * st.h;
  st.y = axpy(-beta, build_lower_direction(p, sample), st.y);
  st.z = axpy(-gamma, s_dir, st.z);
  st.h = (1.0 - theta) * st.h + theta * w;
  ++st.k;
}

namespace detail {

// Deterministic mean-field recursion: Y tracks Y*(x) exactly and the Z
// direction uses the averaged lifted Hessian Hbar. Single-layer problems
// with a columnwise Hessian only.
inline void mean_field_step(const BilevelProblem& problem, const SolverConfig& config, const Matrix& h_bar,
                            SolverState& st) {
  const double alpha = config.resolve_alpha();
  const double gamma = config.c2 * alpha;
  const double theta = config.c3 * alpha;

  const BlockVar y_star = lower_solution(problem, st.x);
  const Matrix s_dir = h_bar * st.z.blocks[0] - problem.grad_y_f(st.x, y_star).blocks[0];
  const Vector w = problem.grad_x_f(st.x, y_star) - problem.jvp(st.x, y_star, st.z);

  st.x -= alpha * st.h;
  st.y = y_star;
  st.z.blocks[0] -= gamma * s_dir;
  st.h = (1.0 - theta) * st.h + theta * w;
  ++st.k;
}

inline TrajectoryRecord evaluate(const BilevelProblem& problem, const SolverState& st, double elapsed) {
  TrajectoryRecord rec;
  rec.k = st.k;
  const BlockVar y_star = lower_solution(problem, st.x, 1e-8);
  const BlockVar z_star = aux_solution(problem, st.x, 1e-8);
  const Vector grad = problem.grad_x_f(st.x, y_star) - problem.jvp(st.x, y_star, z_star);
  rec.grad_norm = grad.norm();
  rec.phi = problem.f(st.x, y_star);
  rec.f_xy = problem.f(st.x, st.y);
  rec.y_err = norm(axpy(-1.0, y_star, st.y));
  rec.z_err = norm(axpy(-1.0, z_star, st.z));
  rec.h_err = (st.h - grad).norm();
  rec.wall_time = elapsed;
  return rec;
}

}  // namespace detail

inline RunResult run_solver(const BilevelProblem& problem, const SolverConfig& config, Method method) {
  RunResult result;
  result.resolved_alpha = config.resolve_alpha();

  std::vector<int> ranks;
  if (method != Method::Masoba) ranks = detail::resolve_ranks(problem, config, method);
  Matrix h_bar;
  if (method == Method::NaiveMeanField) {
    if (!problem.columnwise_hessian || problem.shape.num_layers() != 1)
      throw std::invalid_argument("run_solver: mean-field mode needs a single-layer columnwise Hessian");
    h_bar = mean_field_lifted_hessian(*problem.columnwise_hessian, ranks[0]);
  }

  SolverState st = initial_state(problem, config);
  const RngStream run_stream = RngStream(config.seed).child(static_cast<std::int64_t>(method));
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  result.trajectory.records.push_back(detail::evaluate(problem, st, elapsed()));
  if (config.track_grad_history) result.grad_history.reserve(config.iterations);

  for (long k = 0; k < config.iterations; ++k) {
    if (config.track_grad_history)
      result.grad_history.push_back(exact_hypergradient(problem, st.x, 1e-8).norm());
    if (config.track_z_history) result.z_history.push_back(st.z.blocks[0](0, 0));
    if (method == Method::NaiveMeanField)
      detail::mean_field_step(problem, config, h_bar, st);
    else
      bros_step(problem, config, method, ranks, run_stream, st);
    if (detail::state_blown(st, config.divergence_guard)) {
      result.diverged = true;
      result.diverged_at = st.k;
      break;
    }
    if (st.k % config.eval_stride == 0 && st.k < config.iterations)
      result.trajectory.records.push_back(detail::evaluate(problem, st, elapsed()));
  }
  if (!result.diverged && result.trajectory.records.back().k != st.k)
    result.trajectory.records.push_back(detail::evaluate(problem, st, elapsed()));
  result.final_state = st;
  return result;
}

inline RunResult run_bros(const BilevelProblem& problem, const SolverConfig& config) {
  return run_solver(problem, config, Method::Bros);
}
inline RunResult run_masoba(const BilevelProblem& problem, const SolverConfig& config) {
  return run_solver(problem, config, Method::Masoba);
}
inline RunResult run_naive_sketch(const BilevelProblem& problem, const SolverConfig& config, bool mean_field) {
  return run_solver(problem, config, mean_field ? Method::NaiveMeanField : Method::NaiveStochastic);
}

}  // namespace bros
