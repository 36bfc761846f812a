#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "bros/blockmat.hpp"

namespace bros {

namespace detail {
// SplitMix64 finalizer. Used both to fold path components into a stream
// key and as the per-counter output function.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Counter-based stream: the key is a hash of (seed, path), draws are a pure
// function of (key, counter). Identical (seed, path) replays identical draws
// no matter how other streams are interleaved. Value type; child() is pure.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(detail::mix64(seed ^ 0x8AFE5DE1C6A29E35ULL)) {}

  RngStream(std::uint64_t seed, std::initializer_list<std::int64_t> path) : RngStream(seed) {
    for (auto p : path) *this = child(p);
  }

  // Derive a sub-stream for (iteration, purpose, layer, ...) tags.
  RngStream child(std::int64_t tag) const {
    RngStream s = *this;
    s.key_ = detail::mix64(s.key_ ^ detail::mix64(static_cast<std::uint64_t>(tag) + 0x6C62272E07BB0142ULL));
    s.counter_ = 0;
    s.has_spare_ = false;
    return s;
  }

  std::uint64_t next_u64() { return detail::mix64(key_ + 0xD1342543DE82EF95ULL * ++counter_); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // +1 or -1.
  double next_rademacher() { return (next_u64() & 1) ? 1.0 : -1.0; }

  // Standard normal via the Marsaglia polar method.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  Matrix gaussian_matrix(int rows, int cols) {
    Matrix g(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) g(i, j) = next_gaussian();
    return g;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// i.i.d. N(0, sigma^2) entries per block; sigma = 0 gives exact zeros.
inline BlockVar sample_gaussian_blockvar(RngStream& stream, const BlockShape& shape, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("sample_gaussian_blockvar: negative sigma");
  BlockVar out = BlockVar::zero(shape);
  if (sigma == 0.0) return out;
  for (auto& b : out.blocks) {
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = sigma * stream.next_gaussian();
  }
  return out;
}

}  // namespace bros
