#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "bros/rational.hpp"

namespace bros {

enum class MemMethod { Bros, Masoba, Fdehbo, Penalty };

inline std::string mem_method_name(MemMethod m) {
  switch (m) {
    case MemMethod::Bros: return "bros";
    case MemMethod::Masoba: return "masoba";
    case MemMethod::Fdehbo: return "fdehbo";
    case MemMethod::Penalty: return "penalty";
  }
  return "unknown";
}

inline MemMethod mem_method_from_name(const std::string& s) {
  if (s == "bros") return MemMethod::Bros;
  if (s == "masoba" || s == "ma-soba") return MemMethod::Masoba;
  if (s == "fdehbo") return MemMethod::Fdehbo;
  if (s == "penalty") return MemMethod::Penalty;
  throw std::invalid_argument("unknown memory method: " + s);
}

// One non-GQA decoder block: hidden size n, micro-batch b, sequence length s,
// heads h, subspace rank r. r = 0 is a degenerate calculator-only input.
struct BlockDims {
  std::int64_t n = 0;
  std::int64_t b = 0;
  std::int64_t s = 0;
  std::int64_t h = 0;
  std::int64_t r = 0;
  bool include_attention = true;

  void validate() const {
    if (n < 1 || b < 1 || s < 1 || h < 1) throw std::invalid_argument("BlockDims: n, b, s, h must be positive");
    if (r < 0 || r > n) throw std::invalid_argument("BlockDims: need 0 <= r <= n");
  }
};

// Scalar-slot counts for one trainable decoder block.
struct MemoryBreakdown {
  Rational state;
  Rational hidden_activation;
  Rational attention;
  Rational projected_activation;
  Rational directions;
  Rational total;
};

// Peak-memory proxies:
//   BROS:    24n^2 + (28/3)bsn + 2bhs^2 + 4bsr + (62/3)rn
//   MA-SOBA: 48n^2 + 15bsn + 2bhs^2
//   FdeHBO:  72n^2 + 15bsn + 2bhs^2
//   Penalty: 24n^2 + 15bsn + 2bhs^2
inline MemoryBreakdown peak_proxy(MemMethod method, const BlockDims& dims) {
  dims.validate();
  const Rational n(dims.n), b(dims.b), s(dims.s), h(dims.h), r(dims.r);
  const Rational n2 = n * n;
  const Rational bsn = b * s * n;
  const Rational attn = dims.include_attention ? Rational(2) * b * h * s * s : Rational(0);

  MemoryBreakdown out;
  out.attention = attn;
  switch (method) {
    case MemMethod::Bros:
      out.state = Rational(24) * n2;
      out.hidden_activation = Rational(28, 3) * bsn;
      out.projected_activation = Rational(4) * b * s * r;
      out.directions = Rational(62, 3) * r * n;
      break;
    case MemMethod::Masoba:
      out.state = Rational(24) * n2;
      out.hidden_activation = Rational(15) * bsn;
      out.directions = Rational(24) * n2;
      break;
    case MemMethod::Fdehbo:
      out.state = Rational(48) * n2;
      out.hidden_activation = Rational(15) * bsn;
      out.directions = Rational(24) * n2;
      break;
    case MemMethod::Penalty:
      out.state = Rational(12) * n2;
      out.hidden_activation = Rational(15) * bsn;
      out.directions = Rational(12) * n2;
      break;
  }
  out.total = out.state + out.hidden_activation + out.attention + out.projected_activation + out.directions;
  return out;
}

// Fractional saving of a relative to b: (total_b - total_a) / total_b.
inline double reduction_ratio(MemMethod method_a, MemMethod method_b, const BlockDims& dims) {
  const Rational ta = peak_proxy(method_a, dims).total;
  const Rational tb = peak_proxy(method_b, dims).total;
  if (tb.num == 0) throw std::domain_error("reduction_ratio: zero reference total");
  return ((tb - ta) / tb).value();
}

}  // namespace bros
