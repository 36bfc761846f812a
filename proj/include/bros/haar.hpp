#pragma once

#include <Eigen/QR>
#include <stdexcept>
#include <vector>

#include "bros/blockmat.hpp"
#include "bros/rng.hpp"

namespace bros {

// Per-layer Rademacher probe pair: u_l in {-1,+1}^{n_l}, xi_l in {-1,+1}^{r_l}.
struct ProbeSet {
  std::vector<Vector> u;
  std::vector<Vector> xi;
  int num_layers() const { return static_cast<int>(u.size()); }
};

// Scaled Haar projector sqrt(m/r) * Q, where Q is the thin-QR factor of an
// m x r Gaussian matrix with the positive-diagonal convention on R. The
// result satisfies P^T P = (m/r) I.
inline Matrix sample_haar_projector(RngStream& stream, int m, int r) {
  if (r < 2) throw std::invalid_argument("sample_haar_projector: rank must be >= 2");
  if (r > m) throw std::invalid_argument("sample_haar_projector: rank exceeds rows");
  const Matrix g = stream.gaussian_matrix(m, r);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(m, r);
  const Matrix rfac = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  for (int j = 0; j < r; ++j)
    if (rfac(j, j) < 0.0) q.col(j) = -q.col(j);
  return std::sqrt(static_cast<double>(m) / r) * q;
}

// Layerwise independent projectors from per-layer sub-streams.
inline ProjectorSet sample_projector_set(const RngStream& stream, const BlockShape& shape,
                                         const std::vector<int>& ranks) {
  if (static_cast<int>(ranks.size()) != shape.num_layers())
    throw std::invalid_argument("sample_projector_set: one rank per layer required");
  ProjectorSet p;
  p.layers.reserve(ranks.size());
  for (int l = 0; l < shape.num_layers(); ++l) {
    RngStream s = stream.child(l);
    p.layers.push_back(sample_haar_projector(s, shape.rows(l), ranks[l]));
  }
  return p;
}

// Identity "projectors" (r = m, scale 1); used by the full-space baseline.
inline ProjectorSet identity_projector_set(const BlockShape& shape) {
  ProjectorSet p;
  for (auto [m, n] : shape.layers) p.layers.push_back(Matrix::Identity(m, m));
  return p;
}

inline ProbeSet sample_probe_set(const RngStream& stream, const BlockShape& shape,
                                 const std::vector<int>& ranks) {
  if (static_cast<int>(ranks.size()) != shape.num_layers())
    throw std::invalid_argument("sample_probe_set: one rank per layer required");
  ProbeSet probes;
  for (int l = 0; l < shape.num_layers(); ++l) {
    RngStream s = stream.child(l);
    Vector u(shape.cols(l));
    for (int i = 0; i < u.size(); ++i) u(i) = s.next_rademacher();
    Vector xi(ranks[l]);
    for (int i = 0; i < xi.size(); ++i) xi(i) = s.next_rademacher();
    probes.u.push_back(std::move(u));
    probes.xi.push_back(std::move(xi));
  }
  return probes;
}

}  // namespace bros
