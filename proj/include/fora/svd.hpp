// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Singular values by one-sided Jacobi: rotate column pairs until all are
// mutually orthogonal, then read off the column norms. Values only; no
// singular vectors are kept.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"

namespace fora {

struct Spectrum {
  std::vector<double> values;  // descending, >= 0, length min(rows, cols)
};

inline Spectrum singular_values(const Matrix& m) {
  // Work on the orientation with the fewer columns; sigma(M) == sigma(M^T).
  Matrix a = m.cols() <= m.rows() ? m : transpose(m);
  const std::size_t d = a.rows(), n = a.cols();

  if (n == 0) return {};
  if (n == 1) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a(i, 0) * a(i, 0);
    return {{std::sqrt(s)}};
  }

  constexpr int kMaxSweeps = 60;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double x = a(i, p), y = a(i, q);
          app += x * x;
          aqq += y * y;
          apq += x * y;
        }
        if (app == 0.0 || aqq == 0.0) continue;
        const double rel = std::abs(apq) / std::sqrt(app * aqq);
        worst = std::max(worst, rel);
        if (rel <= kTol) continue;

        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < d; ++i) {
          const double x = a(i, p), y = a(i, q);
          a(i, p) = c * x - s * y;
          a(i, q) = s * x + c * y;
        }
      }
    }
    if (worst <= kTol) break;
  }

  Spectrum out;
  out.values.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a(i, j) * a(i, j);
    out.values[j] = std::sqrt(s);
  }
  std::sort(out.values.begin(), out.values.end(), std::greater<double>());
  return out;
}

}  // namespace fora
