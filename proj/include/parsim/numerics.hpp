// SPDX-License-Identifier: Apache-2.0
//
// Dense vector/matrix kernels and the seeded PRNG the rest of the library
// builds on. Everything here is double precision and deliberately naive:
// model sizes in this project are tiny, reproducibility beats speed.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace parsim {

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace detail

/// Flat dense storage for parameters, gradients and embeddings.
using DenseVector = std::vector<double>;

/// Row-major dense matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  DenseMatrix(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), values(std::move(v)) {
    detail::require(values.size() == rows * cols, "DenseMatrix: values size != rows*cols");
  }

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline DenseMatrix identity_matrix(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

inline void check_finite(const DenseVector& x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) detail::fail(std::string(what) + ": non-finite entry");
  }
}

inline void check_finite(const DenseMatrix& m, const char* what) {
  for (double v : m.values) {
    if (!std::isfinite(v)) detail::fail(std::string(what) + ": non-finite entry");
  }
}

/// result[i] = a*x[i] + y[i]
inline DenseVector vec_axpy(double a, const DenseVector& x, const DenseVector& y) {
  detail::require(x.size() == y.size(), "vec_axpy: dimension mismatch (" +
                                            std::to_string(x.size()) + " vs " +
                                            std::to_string(y.size()) + ")");
  DenseVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + y[i];
  check_finite(out, "vec_axpy");
  return out;
}

inline void vec_add_inplace(DenseVector& acc, const DenseVector& x) {
  detail::require(acc.size() == x.size(), "vec_add_inplace: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += x[i];
}

inline void vec_scale_inplace(DenseVector& x, double a) {
  for (double& v : x) v *= a;
}

inline double dot(const DenseVector& x, const DenseVector& y) {
  detail::require(x.size() == y.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double l1_norm(const DenseVector& x) {
  detail::require(!x.empty(), "l1_norm: empty vector");
  double s = 0.0;
  for (double v : x) s += std::abs(v);
  return s;
}

inline double l2_norm(const DenseVector& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double l2_distance(const DenseVector& x, const DenseVector& y) {
  detail::require(x.size() == y.size(), "l2_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require(a.cols == b.rows, "matmul: shape mismatch (" + std::to_string(a.rows) + "x" +
                                        std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                                        "x" + std::to_string(b.cols) + ")");
  DenseMatrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) {
        out.at(i, j) += aik * b.at(k, j);
      }
    }
  }
  check_finite(out, "matmul");
  return out;
}

inline DenseVector matvec(const DenseMatrix& a, const DenseVector& x) {
  detail::require(a.cols == x.size(), "matvec: shape mismatch");
  DenseVector out(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * x[k];
    out[i] = s;
  }
  check_finite(out, "matvec");
  return out;
}

/// SplitMix64 (Steele/Lea/Flood). Chosen because it is trivially portable:
/// the output stream is a pure function of the 64-bit seed, bit-exact on
/// every platform. All randomness in the project flows through this.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 usable bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, n). Modulo reduction; the bias is irrelevant at
  /// the n << 2^64 scales used here and keeps the draw rule trivial to state.
  std::uint64_t next_below(std::uint64_t n) {
    detail::require(n > 0, "next_below: n must be positive");
    return next_u64() % n;
  }

 private:
  std::uint64_t state_;
};

/// Stateless 64-bit mixer for hash-style scoring (same finalizer as SplitMix64).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace parsim
