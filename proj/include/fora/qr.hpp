// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin QR by Householder reflections. R is normalized to a non-negative
// diagonal, which makes the factorization unique and lets tests compare
// Q factors entrywise.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"

namespace fora {

struct QrThin {
  Matrix q;         // d x r, orthonormal columns
  Matrix r_factor;  // r x r, upper triangular, diag >= 0
};

/// Thin QR of an m (d x r, d >= r) matrix with full column rank.
/// Throws RankError naming the failing column when the residual column norm
/// after orthogonalization drops to <= 1e-12.
inline QrThin qr_thin(const Matrix& m) {
  const std::size_t d = m.rows(), r = m.cols();
  if (d < r)
    throw DimensionError("qr_thin: need rows >= cols, got " + m.shape_str());

  Matrix a = m;                       // working copy, reflectors stored below diag
  std::vector<double> beta(r, 0.0);   // 2 / (v^T v) per reflector
  std::vector<double> diag(r, 0.0);

  for (std::size_t j = 0; j < r; ++j) {
    // Householder vector for column j, rows j..d-1.
    double norm2 = 0.0;
    for (std::size_t i = j; i < d; ++i) norm2 += a(i, j) * a(i, j);
    const double norm = std::sqrt(norm2);
    if (norm <= 1e-12)
      throw RankError("qr_thin: rank-deficient input, column " + std::to_string(j) +
                      " has residual norm " + std::to_string(norm));

    const double alpha = a(j, j) >= 0.0 ? -norm : norm;
    const double v0 = a(j, j) - alpha;
    // v = (v0, a(j+1..d-1, j)); stored in place; a(j,j) holds v0.
    a(j, j) = v0;
    double vtv = v0 * v0;
    for (std::size_t i = j + 1; i < d; ++i) vtv += a(i, j) * a(i, j);
    beta[j] = vtv > 0.0 ? 2.0 / vtv : 0.0;
    diag[j] = alpha;

    // Apply I - beta v v^T to trailing columns.
    for (std::size_t c = j + 1; c < r; ++c) {
      double dot = 0.0;
      for (std::size_t i = j; i < d; ++i) dot += a(i, j) * a(i, c);
      const double f = beta[j] * dot;
      for (std::size_t i = j; i < d; ++i) a(i, c) -= f * a(i, j);
    }
  }

  QrThin out{Matrix(d, r), Matrix(r, r)};
  for (std::size_t i = 0; i < r; ++i) {
    out.r_factor(i, i) = diag[i];
    for (std::size_t j = i + 1; j < r; ++j) out.r_factor(i, j) = a(i, j);
  }

  // Q = H_0 ... H_{r-1} applied to the first r columns of I.
  for (std::size_t c = 0; c < r; ++c) {
    std::vector<double> e(d, 0.0);
    e[c] = 1.0;
    for (std::size_t j = r; j-- > 0;) {
      double dot = 0.0;
      for (std::size_t i = j; i < d; ++i) dot += a(i, j) * e[i];
      const double f = beta[j] * dot;
      for (std::size_t i = j; i < d; ++i) e[i] -= f * a(i, j);
    }
    for (std::size_t i = 0; i < d; ++i) out.q(i, c) = e[i];
  }

  // Sign convention: diag(R) >= 0. Flipping row i of R and column i of Q
  // together leaves the product unchanged.
  for (std::size_t i = 0; i < r; ++i) {
    if (out.r_factor(i, i) < 0.0) {
      for (std::size_t j = i; j < r; ++j) out.r_factor(i, j) = -out.r_factor(i, j);
      for (std::size_t k = 0; k < d; ++k) out.q(k, i) = -out.q(k, i);
    }
  }
  return out;
}

/// Orthonormal factor of a Gaussian matrix: a Haar-ish random Stiefel point.
inline Matrix random_orthonormal(std::size_t d, std::size_t r, RngStream& stream) {
  return qr_thin(random_gaussian(d, r, 1.0, stream)).q;
}

}  // namespace fora
