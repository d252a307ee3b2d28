// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stiefel-manifold machinery for the constrained down-projection B:
// tangent projection, the rank-<=2r skew factor, the Cayley transform
// (dense reference and fixed-point solver), and QR retraction with drift
// tracking. The factored path never materializes a d_out x d_out matrix.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"
#include "fora/qr.hpp"
#include "fora/rng.hpp"

namespace fora {

/// A point on St(d, r) with its last audited ||b^T b - I||_F.
struct StiefelPoint {
  Matrix b;
  double drift = 0.0;
};

inline double stiefel_drift(const Matrix& b) { return orthonormality_defect(b); }

/// Euclidean gradient projected onto the tangent space at b:
/// grad = g - b * sym(b^T g). The output xi satisfies b^T xi + xi^T b = 0.
inline Matrix riemannian_grad(const Matrix& b, const Matrix& g) {
  if (!b.same_shape(g))
    throw DimensionError("riemannian_grad: shapes disagree, " + b.shape_str() + " vs " +
                         g.shape_str());
  const Matrix btg = matmul_tn(b, g);  // r x r
  Matrix sym(btg.rows(), btg.cols());
  for (std::size_t i = 0; i < btg.rows(); ++i)
    for (std::size_t j = 0; j < btg.cols(); ++j)
      sym(i, j) = 0.5 * (btg(i, j) + btg(j, i));
  Matrix out = g;
  axpy(out, -1.0, matmul(b, sym));
  return out;
}

/// Implicit skew matrix W = u v^T - v u^T with u = g - 1/2 b (b^T g) and
/// v = b. This equals What - What^T for What = g b^T - 1/2 b b^T g b^T and
/// has rank at most 2r; it is skew-symmetric exactly by construction.
struct SkewFactor {
  Matrix u;  // d x r
  Matrix v;  // d x r
};

inline SkewFactor build_skew(const Matrix& b, const Matrix& g) {
  if (!b.same_shape(g))
    throw DimensionError("build_skew: shapes disagree, " + b.shape_str() + " vs " +
                         g.shape_str());
  const Matrix btg = matmul_tn(b, g);  // r x r
  Matrix u = g;
  axpy(u, -0.5, matmul(b, btg));
  return SkewFactor{std::move(u), b};
}

/// W * x as u (v^T x) - v (u^T x): O(d * r * cols), no d x d product.
inline Matrix apply(const SkewFactor& w, const Matrix& x) {
  Matrix out = matmul(w.u, matmul_tn(w.v, x));
  axpy(out, -1.0, matmul(w.v, matmul_tn(w.u, x)));
  return out;
}

/// Dense W for small-d test oracles.
inline Matrix skew_dense(const SkewFactor& w) {
  Matrix out = matmul_nt(w.u, w.v);
  axpy(out, -1.0, matmul_nt(w.v, w.u));
  return out;
}

/// Largest singular value of W estimated with `iters` rounds of power
/// iteration on W^T W = -W^2, from a fixed pseudo-random start vector.
inline double spectral_norm_estimate(const SkewFactor& w, int iters = 3) {
  const std::size_t d = w.u.rows();
  Matrix x(d, 1);
  std::uint64_t state = 0x5eed5eed5eedULL;
  for (std::size_t i = 0; i < d; ++i) {
    state = detail::splitmix64(state);
    x(i, 0) = static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  }
  double norm = frobenius_norm(x);
  if (norm == 0.0) return 0.0;
  for (std::size_t i = 0; i < d; ++i) x(i, 0) /= norm;
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Matrix wx = apply(w, x);
    sigma = frobenius_norm(wx);  // ||W x|| with ||x|| = 1
    Matrix wwx = apply(w, wx);
    for (std::size_t i = 0; i < d; ++i) wwx(i, 0) = -wwx(i, 0);  // -W^2 x
    const double n = frobenius_norm(wwx);
    if (n == 0.0) return 0.0;
    for (std::size_t i = 0; i < d; ++i) wwx(i, 0) /= n;
    x = std::move(wwx);
  }
  return sigma;
}

namespace detail {

/// Solves a x = rhs by LU with partial pivoting; a is consumed.
inline Matrix lu_solve(Matrix a, Matrix rhs) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(a(col, col));
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(a(i, col)) > best) {
        best = std::abs(a(i, col));
        piv = i;
      }
    if (best == 0.0) throw NumericalError("lu_solve: singular matrix");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(piv, j));
      for (std::size_t j = 0; j < rhs.cols(); ++j) std::swap(rhs(col, j), rhs(piv, j));
    }
    const double inv = 1.0 / a(col, col);
    for (std::size_t i = col + 1; i < n; ++i) {
      const double f = a(i, col) * inv;
      if (f == 0.0) continue;
      a(i, col) = 0.0;
      for (std::size_t j = col + 1; j < n; ++j) a(i, j) -= f * a(col, j);
      for (std::size_t j = 0; j < rhs.cols(); ++j) rhs(i, j) -= f * rhs(col, j);
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    const double inv = 1.0 / a(col, col);
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
      double s = rhs(col, j);
      for (std::size_t k = col + 1; k < n; ++k) s -= a(col, k) * rhs(k, j);
      rhs(col, j) = s * inv;
    }
  }
  return rhs;
}

}  // namespace detail

/// Reference Cayley update on a dense skew W (small d only):
/// B+ = (I - a/2 W)^{-1} (I + a/2 W) B. Exactly orthogonality-preserving in
/// real arithmetic. Throws if W is not skew-symmetric.
inline Matrix cayley_direct(const Matrix& w_dense, const Matrix& b, double alpha) {
  if (w_dense.rows() != w_dense.cols() || w_dense.rows() != b.rows())
    throw DimensionError("cayley_direct: W " + w_dense.shape_str() + " against B " +
                         b.shape_str());
  double skew_violation = 0.0;
  for (std::size_t i = 0; i < w_dense.rows(); ++i)
    for (std::size_t j = 0; j < w_dense.cols(); ++j)
      skew_violation = std::max(skew_violation, std::abs(w_dense(i, j) + w_dense(j, i)));
  if (skew_violation > 1e-12 * std::max(1.0, max_abs(w_dense)))
    throw NumericalError("cayley_direct: input is not skew-symmetric (violation " +
                         std::to_string(skew_violation) + ")");

  const std::size_t d = w_dense.rows();
  Matrix lhs = identity(d);
  axpy(lhs, -0.5 * alpha, w_dense);
  Matrix y = b;
  axpy(y, 0.5 * alpha, matmul(w_dense, b));  // (I + a/2 W) B
  return detail::lu_solve(std::move(lhs), std::move(y));
}

/// Fixed-point solve of Y = B + a/2 W (B + Y), init Y0 = B + a W B, run for
/// n_c iterations on the factored W. Converges when a ||W||_2 < 2; the loop
/// aborts if the update norm grows twice in a row.
inline Matrix cayley_fixed_point(const SkewFactor& w, const Matrix& b, double alpha,
                                 int n_c) {
  if (n_c < 1) throw ConfigError("cayley_fixed_point: n_c must be >= 1");
  const Matrix wb = apply(w, b);
  Matrix y = b;
  axpy(y, alpha, wb);  // Y0
  double prev_delta = -1.0;
  int growth = 0;
  for (int k = 0; k < n_c; ++k) {
    Matrix bpy = b;
    axpy(bpy, 1.0, y);
    Matrix next = b;
    axpy(next, 0.5 * alpha, apply(w, bpy));
    const double delta = frobenius_norm(sub(next, y));
    if (prev_delta >= 0.0 && delta > prev_delta) {
      if (++growth >= 2)
        throw NumericalError(
            "cayley_fixed_point: iteration diverging (alpha too large for ||W||)");
    } else {
      growth = 0;
    }
    prev_delta = delta;
    y = std::move(next);
  }
  return y;
}

/// QR retraction onto St(d, r); drift is at roundoff right afterwards.
inline StiefelPoint qr_retract(const Matrix& b) {
  QrThin f = qr_thin(b);
  StiefelPoint p{std::move(f.q), 0.0};
  p.drift = stiefel_drift(p.b);
  return p;
}

}  // namespace fora
