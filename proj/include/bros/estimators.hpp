#pragma once

#include <stdexcept>
#include <vector>

#include "bros/blockmat.hpp"
#include "bros/haar.hpp"
#include "bros/moments.hpp"
#include "bros/problems.hpp"
#include "bros/rational.hpp"

namespace bros {

// Exact coefficients of the bi-probe bias correction. In terms of the
// sandwich constants (a, b): main = 1/a, trace = b/a, sharp = b/(a(a-2b)).
// At r = m they reduce to (1, 0, 0) and the estimator is the plain lift.
struct CorrectionCoefficients {
  int m = 0;
  int r = 0;
  Rational main;
  Rational trace;
  Rational sharp;
  double main_d = 0.0;
  double trace_d = 0.0;
  double sharp_d = 0.0;
};

inline CorrectionCoefficients correction_coefficients(int m, int r) {
  if (m < 2) throw std::invalid_argument("correction_coefficients: m must be >= 2");
  if (r < 2 || r > m) throw std::invalid_argument("correction_coefficients: need 2 <= r <= m");
  const std::int64_t M = m, R = r;
  CorrectionCoefficients c;
  c.m = m;
  c.r = r;
  c.main = Rational(R * (M - 1) * (M + 2), M * (M * R + M - 2));
  c.trace = Rational(M - R, M * R + M - 2);
  c.sharp = Rational(R * (M - 1) * (M - R), M * (R - 1) * (M * R + M - 2));
  c.main_d = c.main.value();
  c.trace_d = c.trace.value();
  c.sharp_d = c.sharp.value();
  return c;
}

namespace detail {

// Reduced variable that is zero except for block `layer`.
inline ReducedVar embed_layer(const BlockShape& reduced_shape, int layer, const Matrix& block) {
  ReducedVar out = BlockVar::zero(reduced_shape);
  out.blocks[layer] = block;
  return out;
}

// Global rank-one probe direction: block l is xi_l u_l^T.
inline ReducedVar probe_direction(const ProbeSet& probes) {
  std::vector<Matrix> blocks;
  blocks.reserve(probes.u.size());
  for (size_t l = 0; l < probes.u.size(); ++l) blocks.push_back(probes.xi[l] * probes.u[l].transpose());
  return ReducedVar(std::move(blocks));
}

// Diagonal-layer correction: takes the reduced responses to the
// self-insertion query (a_red) and the shared probe query (m_red) and
// returns the bias-corrected lifted block.
inline Matrix corrected_diagonal(const ProjectorSet& p, const BlockVar& z, const ProbeSet& probes, int layer,
                                 const Matrix& a_red, const Matrix& m_red) {
  const Matrix& pl = p.layers[layer];
  const int m = static_cast<int>(pl.rows());
  const int r = static_cast<int>(pl.cols());
  if (r == m) return pl * a_red;  // exact lift; no correction terms
  const CorrectionCoefficients c = correction_coefficients(m, r);
  const Vector& u = probes.u[layer];
  const Vector& xi = probes.xi[layer];
  const Matrix a = pl * a_red;
  const Matrix z_red = pl.transpose() * z.blocks[layer];
  const Matrix c_hat = z.blocks[layer] * ((m_red.transpose() * xi) * u.transpose());
  const Matrix b_sharp = pl * (xi * (m_red.transpose() * (z_red * u)).transpose());
  return (c.main_d + c.sharp_d) * a - c.trace_d * c_hat - c.sharp_d * b_sharp;
}

}  // namespace detail

// Uncorrected plug-in estimate: lift of H~ applied to the projected state,
//   P H~[P^T Z]. Biased for r < m.
inline BlockVar naive_lifted_hvp(const ProjectorSet& p, const BlockVar& z, const OracleSample& sample) {
  return lift_up(p, sample.hvp(project_down(p, z)));
}

// Bias-corrected block for one layer, with both oracle queries issued
// internally (the self insertion and the shared rank-one probe).
inline Matrix corr_hvp_single_layer(const ProjectorSet& p, const BlockVar& z, const OracleSample& sample,
                                    const ProbeSet& probes, int layer) {
  const BlockShape reduced = p.reduced_shape(z.shape());
  const Matrix z_red = p.layers[layer].transpose() * z.blocks[layer];
  const ReducedVar a_resp = sample.hvp(detail::embed_layer(reduced, layer, z_red));
  const ReducedVar m_resp = sample.hvp(detail::probe_direction(probes));
  return detail::corrected_diagonal(p, z, probes, layer, a_resp.blocks[layer], m_resp.blocks[layer]);
}

// Full multilayer estimate: for each source layer one insertion query, plus
// a single shared probe query (L + 1 operator queries in total). Diagonal
// responses get the correction; cross-layer responses are lifted as is.
inline BlockVar assemble_multilayer_hvp(const ProjectorSet& p, const BlockVar& z, const OracleSample& sample,
                                        const ProbeSet& probes) {
  const int layers = z.num_layers();
  const BlockShape reduced = p.reduced_shape(z.shape());
  const ReducedVar m_resp = sample.hvp(detail::probe_direction(probes));

  BlockVar out = BlockVar::zero(z.shape());
  for (int t = 0; t < layers; ++t) {
    const Matrix z_red = p.layers[t].transpose() * z.blocks[t];
    const ReducedVar resp = sample.hvp(detail::embed_layer(reduced, t, z_red));
    for (int l = 0; l < layers; ++l) {
      if (l == t)
        out.blocks[l] += detail::corrected_diagonal(p, z, probes, l, resp.blocks[l], m_resp.blocks[l]);
      else
        out.blocks[l] += p.layers[l] * resp.blocks[l];
    }
  }
  return out;
}

// Lower-level descent direction in the full space: lift of the projected
// stochastic gradient of g.
inline BlockVar build_lower_direction(const ProjectorSet& p, const OracleSample& sample) {
  return lift_up(p, sample.v);
}

// Auxiliary residual direction: corrected HVP of Z minus the lift of the
// projected gradient of f.
inline BlockVar build_aux_direction(const ProjectorSet& p, const BlockVar& z, const OracleSample& sample,
                                    const ProbeSet& probes) {
  return axpy(-1.0, lift_up(p, sample.uy), assemble_multilayer_hvp(p, z, sample, probes));
}

// Hypergradient sample: u_x - J~[P^T Z].
inline Vector build_hypergrad_sample(const ProjectorSet& p, const BlockVar& z, const OracleSample& sample) {
  return sample.ux - sample.jvp(project_down(p, z));
}

}  // namespace bros
