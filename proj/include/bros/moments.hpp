#pragma once

#include <stdexcept>

#include "bros/blockmat.hpp"
#include "bros/haar.hpp"
#include "bros/rational.hpp"
#include "bros/rng.hpp"

namespace bros {

// Second-moment constants of the scaled Haar sandwich Q A Q with Q = P P^T:
//   E[QAQ] = (a - b) A + b A^T + b tr(A) I.
struct WeingartenConstants {
  int m = 0;
  int r = 0;
  Rational a;
  Rational b;
  double a_d = 0.0;
  double b_d = 0.0;
};

inline WeingartenConstants weingarten_constants(int m, int r) {
  if (m < 2) throw std::invalid_argument("weingarten_constants: m must be >= 2");
  if (r < 2 || r > m) throw std::invalid_argument("weingarten_constants: need 2 <= r <= m");
  const std::int64_t M = m, R = r;
  WeingartenConstants w;
  w.m = m;
  w.r = r;
  w.a = Rational(M * (M * R + M - 2), R * (M - 1) * (M + 2));
  w.b = Rational(M * (M - R), R * (M - 1) * (M + 2));
  w.a_d = w.a.value();
  w.b_d = w.b.value();
  return w;
}

// Closed form of E[Q A Q] for a square deterministic A.
inline Matrix expected_self_sandwich(const Matrix& a_mat, int r) {
  if (a_mat.rows() != a_mat.cols()) throw std::invalid_argument("expected_self_sandwich: square matrix required");
  const int m = static_cast<int>(a_mat.rows());
  const WeingartenConstants w = weingarten_constants(m, r);
  return (w.a_d - w.b_d) * a_mat + w.b_d * a_mat.transpose() +
         w.b_d * a_mat.trace() * Matrix::Identity(m, m);
}

// Empirical mean of Q A Q over i.i.d. scaled-Haar projectors.
inline Matrix monte_carlo_self_sandwich(RngStream& stream, const Matrix& a_mat, int r, long trials) {
  if (trials < 1) throw std::invalid_argument("monte_carlo_self_sandwich: trials must be >= 1");
  const int m = static_cast<int>(a_mat.rows());
  Matrix acc = Matrix::Zero(m, m);
  for (long t = 0; t < trials; ++t) {
    RngStream s = stream.child(t);
    const Matrix p = sample_haar_projector(s, m, r);
    const Matrix q = p * p.transpose();
    acc += q * a_mat * q;
  }
  return acc / static_cast<double>(trials);
}

// Empirical mean of Q_l A Q_t for independent projectors of different layers;
// the exact mean is A itself.
inline Matrix monte_carlo_cross_sandwich(RngStream& stream, const Matrix& a_mat, int r_left, int r_right,
                                         long trials) {
  if (trials < 1) throw std::invalid_argument("monte_carlo_cross_sandwich: trials must be >= 1");
  const int ml = static_cast<int>(a_mat.rows());
  const int mt = static_cast<int>(a_mat.cols());
  Matrix acc = Matrix::Zero(ml, mt);
  for (long t = 0; t < trials; ++t) {
    RngStream sl = stream.child(2 * t);
    RngStream sr = stream.child(2 * t + 1);
    const Matrix pl = sample_haar_projector(sl, ml, r_left);
    const Matrix pr = sample_haar_projector(sr, mt, r_right);
    acc += (pl * pl.transpose()) * a_mat * (pr * pr.transpose());
  }
  return acc / static_cast<double>(trials);
}

// Mean-field operator Hbar = a H + b tr(H) I for a symmetric columnwise
// Hessian (the specialization driving the naive-recursion fixed point).
inline Matrix mean_field_lifted_hessian(const Matrix& h, int r) {
  if (h.rows() != h.cols()) throw std::invalid_argument("mean_field_lifted_hessian: square matrix required");
  if (!h.isApprox(h.transpose(), 1e-12))
    throw std::invalid_argument("mean_field_lifted_hessian: symmetric matrix required");
  const int m = static_cast<int>(h.rows());
  const WeingartenConstants w = weingarten_constants(m, r);
  return w.a_d * h + w.b_d * h.trace() * Matrix::Identity(m, m);
}

}  // namespace bros
