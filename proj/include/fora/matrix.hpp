// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major double-precision matrices and the handful of products the
// rest of the library is built from. All operations are pure functions with
// a fixed summation order (ascending inner index), so results are bitwise
// reproducible for identical inputs.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/rng.hpp"

namespace fora {

namespace probe {
// Test instrumentation. flop_count accumulates 2*m*n*k per matrix product;
// alloc_hook (when set) observes every Matrix allocation. Both are
// thread-local so concurrent runs do not interfere.
inline thread_local std::uint64_t flop_count = 0;
inline thread_local void (*alloc_hook)(std::size_t rows, std::size_t cols) = nullptr;
}  // namespace probe

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (probe::alloc_hook) probe::alloc_hook(rows, cols);
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows) + "x" + std::to_string(cols));
    if (probe::alloc_hook) probe::alloc_hook(rows, cols);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// c = a * b. Summation over k is strictly ascending per output element.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, lhs " + a.shape_str() +
                         " vs rhs " + b.shape_str());
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  probe::flop_count += 2ull * a.rows() * a.cols() * b.cols();
  return c;
}

/// c = a * b^T (rows of both operands are contiguous dot products).
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree, lhs " + a.shape_str() +
                         " vs rhs^T " + b.shape_str());
  Matrix c(a.rows(), b.rows());
  const std::size_t kk = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  probe::flop_count += 2ull * a.rows() * a.cols() * b.rows();
  return c;
}

/// c = a^T * b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: inner dimensions disagree, lhs^T " + a.shape_str() +
                         " vs rhs " + b.shape_str());
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      double* ci = c.row(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  probe::flop_count += 2ull * a.cols() * a.rows() * b.cols();
  return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("add: shapes disagree, " + a.shape_str() + " vs " + b.shape_str());
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("sub: shapes disagree, " + a.shape_str() + " vs " + b.shape_str());
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
  return c;
}

/// y += s * x, in place.
inline void axpy(Matrix& y, double s, const Matrix& x) {
  if (!y.same_shape(x))
    throw DimensionError("axpy: shapes disagree, " + y.shape_str() + " vs " + x.shape_str());
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += s * x.data()[i];
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
  return std::sqrt(s);
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s = std::max(s, std::abs(m.data()[i]));
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: shapes disagree, " + a.shape_str() + " vs " +
                         b.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s = std::max(s, std::abs(a.data()[i] - b.data()[i]));
  return s;
}

/// ||b^T b - I||_F without forming anything larger than r x r.
inline double orthonormality_defect(const Matrix& b) {
  const std::size_t r = b.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < b.rows(); ++k) g += b(k, i) * b(k, j);
      const double d = g - (i == j ? 1.0 : 0.0);
      s += d * d;
    }
  }
  return std::sqrt(s);
}

/// Matrix with i.i.d. N(0, stddev^2) entries, filled row-major from `stream`.
inline Matrix random_gaussian(std::size_t rows, std::size_t cols, double stddev,
                              RngStream& stream) {
  if (stddev <= 0.0) throw ConfigError("random_gaussian: stddev must be positive");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = stddev * stream.gaussian();
  return m;
}

}  // namespace fora
