#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bros/blockmat.hpp"
#include "bros/haar.hpp"
#include "bros/rng.hpp"

namespace bros {

struct ConvergenceError : std::runtime_error {
  double residual;
  ConvergenceError(const std::string& what, double res) : std::runtime_error(what), residual(res) {}
};

// One iteration's frozen full-space stochastic realization. The operator
// closures reuse the same frozen perturbation for every query.
struct FullOracleRealization {
  Vector grad_x_f;
  BlockVar grad_y_f;
  BlockVar grad_y_g;
  std::function<BlockVar(const BlockVar&)> hvp;
  std::function<Vector(const BlockVar&)> jvp;
};

// Projected stochastic oracle bundle at (x, Y) for a fixed projector draw.
struct OracleSample {
  Vector ux;
  ReducedVar uy;
  ReducedVar v;
  std::function<ReducedVar(const ReducedVar&)> hvp;
  std::function<Vector(const ReducedVar&)> jvp;
};

struct BilevelProblem {
  int d_x = 0;
  BlockShape shape;
  double mu_g = 1.0;
  double sigma_grad = 0.0;
  double sigma_op = 0.0;

  std::function<double(const Vector&, const BlockVar&)> f;
  std::function<double(const Vector&, const BlockVar&)> g;
  std::function<Vector(const Vector&, const BlockVar&)> grad_x_f;
  std::function<BlockVar(const Vector&, const BlockVar&)> grad_y_f;
  std::function<BlockVar(const Vector&, const BlockVar&)> grad_y_g;
  // Full-space HVP H(x,Y)[W] and mixed JVP J(x,Y)[W].
  std::function<BlockVar(const Vector&, const BlockVar&, const BlockVar&)> hvp;
  std::function<Vector(const Vector&, const BlockVar&, const BlockVar&)> jvp;

  // Closed-form reference solutions where available.
  std::function<BlockVar(const Vector&)> exact_lower;
  std::function<BlockVar(const Vector&)> exact_aux;

  // Single-layer columnwise Hessian matrix (H[W] = H*W); enables the
  // mean-field naive mode.
  std::optional<Matrix> columnwise_hessian;

  // Custom frozen-noise hook (minibatch problems). Null means additive
  // Gaussian gradient noise plus a frozen random operator perturbation.
  std::function<FullOracleRealization(RngStream&, const Vector&, const BlockVar&)> sample_realization;
};

// ---------------------------------------------------------------------------
// Generic iterative machinery.

// Conjugate gradients for the SPD system op[Z] = b on the product space.
inline BlockVar conjugate_gradient(const std::function<BlockVar(const BlockVar&)>& op, const BlockVar& b,
                                   double tol, int max_iter) {
  BlockVar z = BlockVar::zero(b.shape());
  BlockVar res = b;
  BlockVar dir = res;
  double rs = inner(res, res);
  const double target = tol * tol;
  for (int it = 0; it < max_iter && rs > target; ++it) {
    const BlockVar hd = op(dir);
    const double alpha = rs / inner(dir, hd);
    z = axpy(alpha, dir, z);
    res = axpy(-alpha, hd, res);
    const double rs_new = inner(res, res);
    dir = axpy(rs_new / rs, dir, res);
    rs = rs_new;
  }
  if (rs > target) throw ConvergenceError("conjugate_gradient: residual above tolerance", std::sqrt(rs));
  return z;
}

// Newton-CG with backtracking line search for the strongly convex lower
// problem; used when no closed form is registered.
inline BlockVar iterative_lower_solution(const BilevelProblem& problem, const Vector& x, double tol,
                                         int max_iter = 200) {
  BlockVar y = BlockVar::zero(problem.shape);
  for (int it = 0; it < max_iter; ++it) {
    const BlockVar grad = problem.grad_y_g(x, y);
    const double gn = norm(grad);
    if (gn <= tol) return y;
    auto op = [&](const BlockVar& w) { return problem.hvp(x, y, w); };
    const BlockVar dir = conjugate_gradient(op, grad, std::min(0.1, gn) * gn, 500);
    double t = 1.0;
    const double g0 = problem.g(x, y);
    const double slope = inner(grad, dir);
    while (t > 1e-12 && problem.g(x, axpy(-t, dir, y)) > g0 - 1e-4 * t * slope) t *= 0.5;
    y = axpy(-t, dir, y);
  }
  const double res = norm(problem.grad_y_g(x, y));
  if (res <= tol) return y;
  throw ConvergenceError("iterative_lower_solution: no convergence", res);
}

inline BlockVar lower_solution(const BilevelProblem& problem, const Vector& x, double tol = 1e-10) {
  if (problem.exact_lower) return problem.exact_lower(x);
  return iterative_lower_solution(problem, x, std::max(tol, 1e-12));
}

// Z*(x) solving H(x,Y*)[Z] = grad_Y f(x,Y*).
inline BlockVar aux_solution(const BilevelProblem& problem, const Vector& x, double tol = 1e-10) {
  if (problem.exact_aux) return problem.exact_aux(x);
  const BlockVar y_star = lower_solution(problem, x, tol);
  const BlockVar rhs = problem.grad_y_f(x, y_star);
  auto op = [&](const BlockVar& w) { return problem.hvp(x, y_star, w); };
  return conjugate_gradient(op, rhs, std::max(tol, 1e-12), 2000);
}

// Implicit-gradient formula: grad_x f(x,Y*) - J(x,Y*)[Z*].
inline Vector exact_hypergradient(const BilevelProblem& problem, const Vector& x, double tol = 1e-10) {
  const BlockVar y_star = lower_solution(problem, x, tol);
  const BlockVar z_star = aux_solution(problem, x, tol);
  return problem.grad_x_f(x, y_star) - problem.jvp(x, y_star, z_star);
}

// ---------------------------------------------------------------------------
// Projected oracle construction.

namespace detail {

// Additive-Gaussian default realization: noisy gradients plus frozen
// perturbation operators. The HVP perturbation is a per-layer symmetric
// columnwise matrix (self-adjoint on the product space); its scale keeps the
// conditional second moment proportional to the squared query norm.
inline FullOracleRealization gaussian_realization(const BilevelProblem& problem, RngStream& stream,
                                                  const Vector& x, const BlockVar& y) {
  FullOracleRealization real;
  RngStream s_gx = stream.child(0);
  RngStream s_gyf = stream.child(1);
  RngStream s_gyg = stream.child(2);
  RngStream s_hvp = stream.child(3);
  RngStream s_jvp = stream.child(4);

  real.grad_x_f = problem.grad_x_f(x, y);
  for (int i = 0; i < real.grad_x_f.size(); ++i) real.grad_x_f(i) += problem.sigma_grad * s_gx.next_gaussian();
  real.grad_y_f = axpy(1.0, problem.grad_y_f(x, y), sample_gaussian_blockvar(s_gyf, problem.shape, problem.sigma_grad));
  real.grad_y_g = axpy(1.0, problem.grad_y_g(x, y), sample_gaussian_blockvar(s_gyg, problem.shape, problem.sigma_grad));

  const double sig_op = problem.sigma_op;
  auto xi = std::make_shared<std::vector<Matrix>>();
  if (sig_op > 0.0) {
    for (auto [m, n] : problem.shape.layers) {
      const Matrix r = s_hvp.gaussian_matrix(m, m);
      xi->push_back((sig_op / std::sqrt(2.0 * m)) * (r + r.transpose()));
    }
  }
  auto psi = std::make_shared<Matrix>();
  if (sig_op > 0.0) {
    const long total = problem.shape.total_entries();
    *psi = (sig_op / std::sqrt(static_cast<double>(total))) * s_jvp.gaussian_matrix(problem.d_x, static_cast<int>(total));
  }

  const BilevelProblem* prob = &problem;
  Vector x_cap = x;
  BlockVar y_cap = y;
  real.hvp = [prob, x_cap, y_cap, xi, sig_op](const BlockVar& w) {
    BlockVar out = prob->hvp(x_cap, y_cap, w);
    if (sig_op > 0.0)
      for (size_t l = 0; l < out.blocks.size(); ++l) out.blocks[l] += (*xi)[l] * w.blocks[l];
    return out;
  };
  real.jvp = [prob, x_cap, y_cap, psi, sig_op](const BlockVar& w) {
    Vector out = prob->jvp(x_cap, y_cap, w);
    if (sig_op > 0.0) out += (*psi) * w.flatten();
    return out;
  };
  return real;
}

}  // namespace detail

// Composes the frozen full-space realization with the projector draw:
//   V~ = P^T(grad_Y g + eps),  H~[W] = P^T((H + Xi)[P W]),  etc.
inline OracleSample sample_projected_oracles(const BilevelProblem& problem, RngStream& stream, const Vector& x,
                                             const BlockVar& y, const ProjectorSet& p) {
  auto real = std::make_shared<FullOracleRealization>(
      problem.sample_realization ? problem.sample_realization(stream, x, y)
                                 : detail::gaussian_realization(problem, stream, x, y));
  OracleSample sample;
  sample.ux = real->grad_x_f;
  sample.uy = project_down(p, real->grad_y_f);
  sample.v = project_down(p, real->grad_y_g);
  auto p_cap = std::make_shared<ProjectorSet>(p);
  sample.hvp = [real, p_cap](const ReducedVar& w) { return project_down(*p_cap, real->hvp(lift_up(*p_cap, w))); };
  sample.jvp = [real, p_cap](const ReducedVar& w) { return real->jvp(lift_up(*p_cap, w)); };
  return sample;
}

// Subspace-native path for single-layer columnwise quadratics: forms the
// reduced Hessian P^T (H + Xi) P once and answers every HVP query with an
// r x r product, never touching the full space per query. Demonstrates the
// reduced-memory evaluation; agrees with the composed path to roundoff.
inline OracleSample sample_projected_oracles_subspace_native(const BilevelProblem& problem, RngStream& stream,
                                                             const Vector& x, const BlockVar& y,
                                                             const ProjectorSet& p) {
  if (!problem.columnwise_hessian || problem.shape.num_layers() != 1)
    throw std::invalid_argument("subspace-native oracles need a single-layer columnwise Hessian");
  auto real = std::make_shared<FullOracleRealization>(
      problem.sample_realization ? problem.sample_realization(stream, x, y)
                                 : detail::gaussian_realization(problem, stream, x, y));
  OracleSample sample;
  sample.ux = real->grad_x_f;
  sample.uy = project_down(p, real->grad_y_f);
  sample.v = project_down(p, real->grad_y_g);

  const Matrix& pl = p.layers[0];
  // One reduced-Hessian assembly per iteration: columns of (H + Xi) P.
  Matrix hp(pl.rows(), pl.cols());
  for (Eigen::Index j = 0; j < pl.cols(); ++j)
    hp.col(j) = real->hvp(BlockVar({Matrix(pl.col(j))})).blocks[0].col(0);
  auto h_red = std::make_shared<Matrix>(pl.transpose() * hp);
  sample.hvp = [h_red](const ReducedVar& w) { return ReducedVar({(*h_red) * w.blocks[0]}); };
  auto p_cap = std::make_shared<ProjectorSet>(p);
  sample.jvp = [real, p_cap](const ReducedVar& w) { return real->jvp(lift_up(*p_cap, w)); };
  return sample;
}

// ---------------------------------------------------------------------------
// Problem constructors.

// Single-layer quadratic testbed with columnwise SPD Hessian:
//   g(x,Y) = 1/2 <Y, H Y> - <G(x), Y>,  f(x,Y) = 1/2 |x|^2 + <D, Y>,
// where G(x) is linear in x. Closed forms: Y*(x) = H^{-1} G(x), Z* = H^{-1} D.
inline BilevelProblem make_quadratic(RngStream& stream, int m, int n, int d_x, double conditioning,
                                     double sigma_grad, double sigma_op) {
  if (m < 1 || n < 1 || d_x < 1) throw std::invalid_argument("make_quadratic: dimensions must be >= 1");
  if (conditioning < 1.0) throw std::invalid_argument("make_quadratic: conditioning must be >= 1");

  struct Data {
    Matrix h, h_inv, d;
    std::vector<Matrix> g_cols;  // G(x)_{:,j} = g_cols[j] * x
    BlockShape shape;
  };
  auto data = std::make_shared<Data>();
  data->shape = BlockShape({{m, n}});

  if (conditioning == 1.0 || m == 1) {
    data->h = Matrix::Identity(m, m) * (m == 1 ? conditioning : 1.0);
  } else {
    RngStream s = stream.child(0);
    const Matrix v = sample_haar_projector(s, m, m);
    Vector eig(m);
    for (int i = 0; i < m; ++i) eig(i) = 1.0 + (conditioning - 1.0) * i / (m - 1);
    data->h = v * eig.asDiagonal() * v.transpose();
    data->h = 0.5 * (data->h + data->h.transpose());
  }
  data->h_inv = data->h.inverse();
  RngStream s1 = stream.child(1);
  data->d = s1.gaussian_matrix(m, n);
  RngStream s2 = stream.child(2);
  for (int j = 0; j < n; ++j) data->g_cols.push_back(s2.gaussian_matrix(m, d_x));

  auto g_of_x = [data](const Vector& x) {
    Matrix g(data->h.rows(), data->d.cols());
    for (size_t j = 0; j < data->g_cols.size(); ++j) g.col(j) = data->g_cols[j] * x;
    return g;
  };

  BilevelProblem prob;
  prob.d_x = d_x;
  prob.shape = data->shape;
  prob.mu_g = 1.0;
  prob.sigma_grad = sigma_grad;
  prob.sigma_op = sigma_op;
  prob.columnwise_hessian = data->h;

  prob.g = [data, g_of_x](const Vector& x, const BlockVar& y) {
    const Matrix& ym = y.blocks[0];
    return 0.5 * (ym.cwiseProduct(data->h * ym)).sum() - (g_of_x(x).cwiseProduct(ym)).sum();
  };
  prob.f = [data](const Vector& x, const BlockVar& y) {
    return 0.5 * x.squaredNorm() + (data->d.cwiseProduct(y.blocks[0])).sum();
  };
  prob.grad_x_f = [](const Vector& x, const BlockVar&) { return x; };
  prob.grad_y_f = [data](const Vector&, const BlockVar&) { return BlockVar({data->d}); };
  prob.grad_y_g = [data, g_of_x](const Vector& x, const BlockVar& y) {
    return BlockVar({data->h * y.blocks[0] - g_of_x(x)});
  };
  prob.hvp = [data](const Vector&, const BlockVar&, const BlockVar& w) { return BlockVar({data->h * w.blocks[0]}); };
  prob.jvp = [data](const Vector&, const BlockVar&, const BlockVar& w) {
    Vector out = Vector::Zero(data->g_cols[0].cols());
    for (size_t j = 0; j < data->g_cols.size(); ++j) out -= data->g_cols[j].transpose() * w.blocks[0].col(j);
    return out;
  };
  prob.exact_lower = [data, g_of_x](const Vector& x) { return BlockVar({data->h_inv * g_of_x(x)}); };
  prob.exact_aux = [data](const Vector&) { return BlockVar({data->h_inv * data->d}); };
  return prob;
}

// Deterministic 3x1 quadratic with a known biased naive fixed point:
// H = diag(1,2,3), c = d = e1, so y*(x) = x e1, z* = e1, grad Phi(x) = x + 1.
inline BilevelProblem make_counterexample() {
  const int m = 3;
  Matrix h = Vector::LinSpaced(3, 1.0, 3.0).asDiagonal();
  Vector e1 = Vector::Zero(m);
  e1(0) = 1.0;
  auto data = std::make_shared<std::pair<Matrix, Vector>>(h, e1);

  BilevelProblem prob;
  prob.d_x = 1;
  prob.shape = BlockShape({{m, 1}});
  prob.mu_g = 1.0;
  prob.columnwise_hessian = h;

  prob.g = [data](const Vector& x, const BlockVar& y) {
    const Vector yv = y.blocks[0].col(0);
    return 0.5 * yv.dot(data->first * yv) - x(0) * data->second.dot(yv);
  };
  prob.f = [data](const Vector& x, const BlockVar& y) {
    return 0.5 * x(0) * x(0) + data->second.dot(y.blocks[0].col(0));
  };
  prob.grad_x_f = [](const Vector& x, const BlockVar&) { return x; };
  prob.grad_y_f = [data](const Vector&, const BlockVar&) { return BlockVar({Matrix(data->second)}); };
  prob.grad_y_g = [data](const Vector& x, const BlockVar& y) {
    return BlockVar({Matrix(data->first * y.blocks[0].col(0) - x(0) * data->second)});
  };
  prob.hvp = [data](const Vector&, const BlockVar&, const BlockVar& w) {
    return BlockVar({Matrix(data->first * w.blocks[0])});
  };
  prob.jvp = [data](const Vector&, const BlockVar&, const BlockVar& w) {
    Vector out(1);
    out(0) = -data->second.dot(w.blocks[0].col(0));
    return out;
  };
  prob.exact_lower = [data](const Vector& x) { return BlockVar({Matrix(x(0) * data->second)}); };
  prob.exact_aux = [data](const Vector&) { return BlockVar({Matrix(data->second)}); };
  return prob;
}

// Multilayer quadratic with a dense SPD Hessian on the flattened product
// space (cross-layer coupling blocks included). Used to exercise the
// off-diagonal lift and probe cancellation paths.
inline BilevelProblem make_coupled_quadratic(RngStream& stream, const BlockShape& shape, int d_x,
                                             double conditioning, double sigma_grad, double sigma_op) {
  const long total = shape.total_entries();
  struct Data {
    Matrix h, h_inv, g_map;  // g_map: N x d_x
    Vector d;
    BlockShape shape;
  };
  auto data = std::make_shared<Data>();
  data->shape = shape;
  {
    RngStream s = stream.child(0);
    const Matrix v = sample_haar_projector(s, static_cast<int>(total), static_cast<int>(total));
    Vector eig(total);
    for (long i = 0; i < total; ++i)
      eig(i) = total == 1 ? 1.0 : 1.0 + (conditioning - 1.0) * i / (total - 1);
    data->h = v * eig.asDiagonal() * v.transpose();
    data->h = 0.5 * (data->h + data->h.transpose());
    data->h_inv = data->h.inverse();
  }
  RngStream s1 = stream.child(1);
  data->d = Vector::NullaryExpr(total, [&](Eigen::Index) { return s1.next_gaussian(); });
  RngStream s2 = stream.child(2);
  data->g_map = s2.gaussian_matrix(static_cast<int>(total), d_x);

  BilevelProblem prob;
  prob.d_x = d_x;
  prob.shape = shape;
  prob.mu_g = 1.0;
  prob.sigma_grad = sigma_grad;
  prob.sigma_op = sigma_op;

  prob.g = [data](const Vector& x, const BlockVar& y) {
    const Vector v = y.flatten();
    return 0.5 * v.dot(data->h * v) - (data->g_map * x).dot(v);
  };
  prob.f = [data](const Vector& x, const BlockVar& y) { return 0.5 * x.squaredNorm() + data->d.dot(y.flatten()); };
  prob.grad_x_f = [](const Vector& x, const BlockVar&) { return x; };
  prob.grad_y_f = [data](const Vector&, const BlockVar&) { return BlockVar::unflatten(data->d, data->shape); };
  prob.grad_y_g = [data](const Vector& x, const BlockVar& y) {
    return BlockVar::unflatten(data->h * y.flatten() - data->g_map * x, data->shape);
  };
  prob.hvp = [data](const Vector&, const BlockVar&, const BlockVar& w) {
    return BlockVar::unflatten(data->h * w.flatten(), data->shape);
  };
  prob.jvp = [data](const Vector&, const BlockVar&, const BlockVar& w) {
    return Vector(-data->g_map.transpose() * w.flatten());
  };
  prob.exact_lower = [data](const Vector& x) {
    return BlockVar::unflatten(data->h_inv * (data->g_map * x), data->shape);
  };
  prob.exact_aux = [data](const Vector&) { return BlockVar::unflatten(data->h_inv * data->d, data->shape); };
  return prob;
}

// ---------------------------------------------------------------------------
// Synthetic hyper-cleaning: the upper variable assigns per-sample weights
// sigmoid(x_i) to a label-noised training set; the lower problem is a
// weighted ridge-regularized softmax classifier; f is the clean validation
// cross-entropy. Oracle noise is minibatch subsampling (batch = 0 means
// full batch, which reproduces the deterministic gradients exactly).
struct HypercleaningData {
  Matrix train_features;  // n_train x d_feat
  Matrix val_features;    // n_val x d_feat
  std::vector<int> train_labels;  // noisy
  std::vector<int> train_labels_clean;
  std::vector<int> val_labels;
  int classes = 0;
  double ridge = 0.0;
  int batch_train = 0;
  int batch_val = 0;
};

namespace detail {

inline Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp();
  return p / p.sum();
}

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Sum of weighted softmax cross-entropy terms over the given sample set.
inline double weighted_ce(const Matrix& w, const Matrix& feats, const std::vector<int>& labels,
                          const std::vector<int>& idx, const Vector* weights) {
  double loss = 0.0;
  for (int i : idx) {
    const Vector logits = w * feats.row(i).transpose();
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    const double term = lse - logits(labels[i]);
    loss += weights ? sigmoid((*weights)(i)) * term : term;
  }
  return loss;
}

inline std::vector<int> all_indices(int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

inline BilevelProblem make_hypercleaning(RngStream& stream, int n_train, int n_val, int d_feat, int classes,
                                         double noise_rate, double ridge, int batch_train = 0,
                                         int batch_val = 0) {
  if (classes < 2) throw std::invalid_argument("make_hypercleaning: need at least 2 classes");
  if (ridge <= 0.0) throw std::invalid_argument("make_hypercleaning: ridge must be > 0");
  if (noise_rate < 0.0 || noise_rate >= 1.0) throw std::invalid_argument("make_hypercleaning: noise_rate in [0,1)");

  auto data = std::make_shared<HypercleaningData>();
  data->classes = classes;
  data->ridge = ridge;
  data->batch_train = batch_train;
  data->batch_val = batch_val;

  // Gaussian class blobs, unit within-class noise.
  RngStream s_means = stream.child(0);
  Matrix means = 2.0 * s_means.gaussian_matrix(classes, d_feat);
  auto draw_set = [&](RngStream s, int n, Matrix& feats, std::vector<int>& labels) {
    feats.resize(n, d_feat);
    labels.resize(n);
    for (int i = 0; i < n; ++i) {
      const int c = static_cast<int>(s.next_u64() % classes);
      labels[i] = c;
      for (int j = 0; j < d_feat; ++j) feats(i, j) = means(c, j) + s.next_gaussian();
    }
  };
  draw_set(stream.child(1), n_train, data->train_features, data->train_labels_clean);
  draw_set(stream.child(2), n_val, data->val_features, data->val_labels);

  data->train_labels = data->train_labels_clean;
  RngStream s_noise = stream.child(3);
  for (int i = 0; i < n_train; ++i) {
    if (s_noise.next_double() < noise_rate) {
      const int shift = 1 + static_cast<int>(s_noise.next_u64() % (classes - 1));
      data->train_labels[i] = (data->train_labels[i] + shift) % classes;
    }
  }

  BilevelProblem prob;
  prob.d_x = n_train;
  prob.shape = BlockShape({{classes, d_feat}});
  prob.mu_g = ridge;
  const int n_tr = n_train, n_vl = n_val;

  prob.g = [data, n_tr](const Vector& x, const BlockVar& y) {
    const auto idx = detail::all_indices(n_tr);
    return detail::weighted_ce(y.blocks[0], data->train_features, data->train_labels, idx, &x) / n_tr +
           0.5 * data->ridge * y.blocks[0].squaredNorm();
  };
  prob.f = [data, n_vl](const Vector&, const BlockVar& y) {
    const auto idx = detail::all_indices(n_vl);
    return detail::weighted_ce(y.blocks[0], data->val_features, data->val_labels, idx, nullptr) / n_vl;
  };
  prob.grad_x_f = [n_tr](const Vector&, const BlockVar&) { return Vector::Zero(n_tr).eval(); };

  // Shared sample-set derivative kernels; `idx` selects a minibatch (with
  // repetition allowed) and `scale` is 1/|set used for the expectation|.
  auto grad_g_on = [data](const Vector& x, const Matrix& w, const std::vector<int>& idx, double scale) {
    Matrix g = data->ridge * w;
    for (int i : idx) {
      const Vector phi = data->train_features.row(i).transpose();
      Vector p = detail::softmax(w * phi);
      p(data->train_labels[i]) -= 1.0;
      g += scale * detail::sigmoid(x(i)) * (p * phi.transpose());
    }
    return g;
  };
  auto grad_f_on = [data](const Matrix& w, const std::vector<int>& idx, double scale) {
    Matrix g = Matrix::Zero(w.rows(), w.cols());
    for (int i : idx) {
      const Vector psi = data->val_features.row(i).transpose();
      Vector p = detail::softmax(w * psi);
      p(data->val_labels[i]) -= 1.0;
      g += scale * (p * psi.transpose());
    }
    return g;
  };
  auto hvp_on = [data](const Vector& x, const Matrix& w, const Matrix& dir, const std::vector<int>& idx,
                       double scale) {
    Matrix out = data->ridge * dir;
    for (int i : idx) {
      const Vector phi = data->train_features.row(i).transpose();
      const Vector p = detail::softmax(w * phi);
      const Vector s = dir * phi;
      const Vector a = p.cwiseProduct(s) - p * p.dot(s);
      out += scale * detail::sigmoid(x(i)) * (a * phi.transpose());
    }
    return out;
  };
  auto jvp_on = [data, n_tr](const Vector& x, const Matrix& w, const Matrix& dir, const std::vector<int>& idx,
                             double scale) {
    Vector out = Vector::Zero(n_tr);
    for (int i : idx) {
      const Vector phi = data->train_features.row(i).transpose();
      Vector p = detail::softmax(w * phi);
      p(data->train_labels[i]) -= 1.0;
      const double sg = detail::sigmoid(x(i));
      out(i) += scale * sg * (1.0 - sg) * p.dot(dir * phi);
    }
    return out;
  };

  prob.grad_y_g = [grad_g_on, n_tr](const Vector& x, const BlockVar& y) {
    return BlockVar({grad_g_on(x, y.blocks[0], detail::all_indices(n_tr), 1.0 / n_tr)});
  };
  prob.grad_y_f = [grad_f_on, n_vl](const Vector&, const BlockVar& y) {
    return BlockVar({grad_f_on(y.blocks[0], detail::all_indices(n_vl), 1.0 / n_vl)});
  };
  prob.hvp = [hvp_on, n_tr](const Vector& x, const BlockVar& y, const BlockVar& w) {
    return BlockVar({hvp_on(x, y.blocks[0], w.blocks[0], detail::all_indices(n_tr), 1.0 / n_tr)});
  };
  prob.jvp = [jvp_on, n_tr](const Vector& x, const BlockVar& y, const BlockVar& w) {
    return jvp_on(x, y.blocks[0], w.blocks[0], detail::all_indices(n_tr), 1.0 / n_tr);
  };

  prob.sample_realization = [data, grad_g_on, grad_f_on, hvp_on, jvp_on, n_tr, n_vl](
                                RngStream& rs, const Vector& x, const BlockVar& y) {
    auto pick = [](RngStream s, int n, int batch) {
      if (batch <= 0 || batch >= n) return detail::all_indices(n);
      std::vector<int> idx(batch);
      for (int i = 0; i < batch; ++i) idx[i] = static_cast<int>(s.next_u64() % n);
      return idx;
    };
    auto idx_g = std::make_shared<std::vector<int>>(pick(rs.child(0), n_tr, data->batch_train));
    const auto idx_f = pick(rs.child(1), n_vl, data->batch_val);
    const double scale_g = 1.0 / static_cast<double>(idx_g->size());
    const double scale_f = 1.0 / static_cast<double>(idx_f.size());

    FullOracleRealization real;
    real.grad_x_f = Vector::Zero(n_tr);
    real.grad_y_g = BlockVar({grad_g_on(x, y.blocks[0], *idx_g, scale_g)});
    real.grad_y_f = BlockVar({grad_f_on(y.blocks[0], idx_f, scale_f)});
    Vector x_cap = x;
    BlockVar y_cap = y;
    real.hvp = [hvp_on, idx_g, scale_g, x_cap, y_cap](const BlockVar& w) {
      return BlockVar({hvp_on(x_cap, y_cap.blocks[0], w.blocks[0], *idx_g, scale_g)});
    };
    real.jvp = [jvp_on, idx_g, scale_g, x_cap, y_cap](const BlockVar& w) {
      return jvp_on(x_cap, y_cap.blocks[0], w.blocks[0], *idx_g, scale_g);
    };
    return real;
  };

  return prob;
}

// Optional CSV import: label first, features after, one row per sample.
inline void load_label_feature_csv(const std::string& path, Matrix& features, std::vector<int>& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_label_feature_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() < 2) throw std::runtime_error("load_label_feature_csv: need label plus features");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_label_feature_csv: empty file");
  const size_t d = rows[0].size() - 1;
  features.resize(static_cast<long>(rows.size()), static_cast<long>(d));
  labels.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d + 1) throw std::runtime_error("load_label_feature_csv: ragged rows");
    labels[i] = static_cast<int>(rows[i][0]);
    for (size_t j = 0; j < d; ++j) features(static_cast<long>(i), static_cast<long>(j)) = rows[i][j + 1];
  }
}

}  // namespace bros
