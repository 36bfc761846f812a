#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bros {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-layer (rows, cols) of a multilayer matrix variable.
struct BlockShape {
  std::vector<std::pair<int, int>> layers;

  BlockShape() = default;
  explicit BlockShape(std::vector<std::pair<int, int>> dims) : layers(std::move(dims)) {
    if (layers.empty()) throw ShapeError("BlockShape: empty layer list");
    for (auto [m, n] : layers)
      if (m < 1 || n < 1) throw ShapeError("BlockShape: dimensions must be >= 1");
  }

  int num_layers() const { return static_cast<int>(layers.size()); }
  int rows(int l) const { return layers[l].first; }
  int cols(int l) const { return layers[l].second; }
  long total_entries() const {
    long t = 0;
    for (auto [m, n] : layers) t += static_cast<long>(m) * n;
    return t;
  }
  bool operator==(const BlockShape& o) const { return layers == o.layers; }
};

// Ordered list of dense blocks, one per layer. Also used for reduced
// (r_l x n_l) variables; the two roles share all algebra below.
struct BlockVar {
  std::vector<Matrix> blocks;

  BlockVar() = default;
  explicit BlockVar(std::vector<Matrix> b) : blocks(std::move(b)) {}

  static BlockVar zero(const BlockShape& shape) {
    std::vector<Matrix> b;
    b.reserve(shape.layers.size());
    for (auto [m, n] : shape.layers) b.push_back(Matrix::Zero(m, n));
    return BlockVar(std::move(b));
  }

  int num_layers() const { return static_cast<int>(blocks.size()); }
  BlockShape shape() const {
    std::vector<std::pair<int, int>> dims;
    dims.reserve(blocks.size());
    for (const auto& b : blocks) dims.emplace_back(static_cast<int>(b.rows()), static_cast<int>(b.cols()));
    return BlockShape(std::move(dims));
  }
  bool same_shape(const BlockVar& o) const {
    if (blocks.size() != o.blocks.size()) return false;
    for (size_t l = 0; l < blocks.size(); ++l)
      if (blocks[l].rows() != o.blocks[l].rows() || blocks[l].cols() != o.blocks[l].cols()) return false;
    return true;
  }
  bool all_finite() const {
    for (const auto& b : blocks)
      if (!b.allFinite()) return false;
    return true;
  }

  Vector flatten() const {
    Vector v(total_entries());
    long off = 0;
    for (const auto& b : blocks) {
      v.segment(off, b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
      off += b.size();
    }
    return v;
  }
  static BlockVar unflatten(const Vector& v, const BlockShape& shape) {
    BlockVar out = zero(shape);
    long off = 0;
    for (auto& b : out.blocks) {
      Eigen::Map<Vector>(b.data(), b.size()) = v.segment(off, b.size());
      off += b.size();
    }
    return out;
  }
  long total_entries() const {
    long t = 0;
    for (const auto& b : blocks) t += b.size();
    return t;
  }
};

using ReducedVar = BlockVar;

inline double inner(const BlockVar& u, const BlockVar& v) {
  if (!u.same_shape(v)) throw ShapeError("inner: block shape mismatch");
  double s = 0.0;
  for (size_t l = 0; l < u.blocks.size(); ++l) s += u.blocks[l].cwiseProduct(v.blocks[l]).sum();
  return s;
}

inline double norm(const BlockVar& u) { return std::sqrt(inner(u, u)); }

// a*U + V, blockwise.
inline BlockVar axpy(double a, const BlockVar& u, const BlockVar& v) {
  if (!u.same_shape(v)) throw ShapeError("axpy: block shape mismatch");
  BlockVar out = v;
  for (size_t l = 0; l < u.blocks.size(); ++l) out.blocks[l] += a * u.blocks[l];
  return out;
}

inline BlockVar scale(double a, const BlockVar& u) {
  BlockVar out = u;
  for (auto& b : out.blocks) b *= a;
  return out;
}

// Per-layer scaled semi-orthogonal matrices P_l (m_l x r_l) with
// P_l^T P_l = (m_l/r_l) I.
struct ProjectorSet {
  std::vector<Matrix> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int rows(int l) const { return static_cast<int>(layers[l].rows()); }
  int rank(int l) const { return static_cast<int>(layers[l].cols()); }

  BlockShape reduced_shape(const BlockShape& full) const {
    std::vector<std::pair<int, int>> dims;
    for (int l = 0; l < num_layers(); ++l) dims.emplace_back(rank(l), full.cols(l));
    return BlockShape(std::move(dims));
  }
};

// P^T U, blockwise.
inline ReducedVar project_down(const ProjectorSet& p, const BlockVar& u) {
  if (p.num_layers() != u.num_layers()) throw ShapeError("project_down: layer count mismatch");
  ReducedVar out;
  out.blocks.reserve(u.blocks.size());
  for (int l = 0; l < u.num_layers(); ++l) {
    if (p.layers[l].rows() != u.blocks[l].rows()) throw ShapeError("project_down: row mismatch");
    out.blocks.push_back(p.layers[l].transpose() * u.blocks[l]);
  }
  return out;
}

// P B, blockwise.
inline BlockVar lift_up(const ProjectorSet& p, const ReducedVar& b) {
  if (p.num_layers() != b.num_layers()) throw ShapeError("lift_up: layer count mismatch");
  BlockVar out;
  out.blocks.reserve(b.blocks.size());
  for (int l = 0; l < b.num_layers(); ++l) {
    if (p.layers[l].cols() != b.blocks[l].rows()) throw ShapeError("lift_up: rank mismatch");
    out.blocks.push_back(p.layers[l] * b.blocks[l]);
  }
  return out;
}

// Flat text dump: one "layer m n" header per block, then row-major entries.
inline void write_blockvar(std::ostream& os, const BlockVar& u) {
  os.precision(17);
  for (const auto& b : u.blocks) {
    os << "layer " << b.rows() << " " << b.cols() << "\n";
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.cols(); ++j) {
        if (j) os << ",";
        os << b(i, j);
      }
      os << "\n";
    }
  }
}

inline BlockVar read_blockvar(std::istream& is) {
  std::vector<Matrix> blocks;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag;
    long m = 0, n = 0;
    hdr >> tag >> m >> n;
    if (tag != "layer" || m < 1 || n < 1) throw ShapeError("read_blockvar: bad layer header");
    Matrix b(m, n);
    for (long i = 0; i < m; ++i) {
      if (!std::getline(is, line)) throw ShapeError("read_blockvar: truncated block");
      std::istringstream row(line);
      std::string cell;
      for (long j = 0; j < n; ++j) {
        if (!std::getline(row, cell, ',')) throw ShapeError("read_blockvar: short row");
        b(i, j) = std::stod(cell);
      }
    }
    blocks.push_back(std::move(b));
  }
  if (blocks.empty()) throw ShapeError("read_blockvar: no blocks");
  return BlockVar(std::move(blocks));
}

}  // namespace bros
