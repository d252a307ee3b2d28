// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Phase-2 dual-optimizer training: decoupled-weight-decay Adam on every A
// (and on unconstrained B in baseline arms, at the same learning rate with
// no decay), Cayley-Adam on every constrained B. Both optimizers step at
// every iteration; QR re-projection runs on the T_qr schedule or
// immediately once drift exceeds 1e-3.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/forward.hpp"
#include "fora/stiefel.hpp"

namespace fora {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kDriftBound = 1e-3;

struct AdamWState {
  Matrix m, v;
  long t = 0;
};

/// Bias-corrected Adam with decoupled weight decay:
/// p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p.
inline void adamw_step(Matrix& param, const Matrix& grad, AdamWState& state, double lr,
                       double wd) {
  if (!param.same_shape(grad))
    throw DimensionError("adamw_step: shapes disagree, " + param.shape_str() + " vs " +
                         grad.shape_str());
  if (state.t == 0) {
    state.m = Matrix(param.rows(), param.cols());
    state.v = Matrix(param.rows(), param.cols());
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data()[i];
    double& m = state.m.data()[i];
    double& v = state.v.data()[i];
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param.data()[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps) + lr * wd * param.data()[i];
  }
}

/// Cayley-Adam state: matrix first moment, scalar second moment built from
/// the gradient's squared Frobenius norm.
struct CayleyAdamState {
  Matrix m;
  double v = 0.0;
  long t = 0;
};

/// One Cayley-Adam step on a Stiefel point. The skew direction is built
/// from the bias-corrected first moment; the step size lr / (sqrt(vhat) +
/// eps) is clamped so alpha * ||W||_2 <= 0.5 (three power iterations
/// estimate the norm). Drift is audited after the update.
inline void cayley_adam_step(Matrix& b, double& drift, const Matrix& grad,
                             CayleyAdamState& state, double lr, int n_c) {
  if (!b.same_shape(grad))
    throw DimensionError("cayley_adam_step: shapes disagree, " + b.shape_str() + " vs " +
                         grad.shape_str());
  if (state.t == 0) state.m = Matrix(b.rows(), b.cols());
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < b.size(); ++i)
    state.m.data()[i] =
        kAdamBeta1 * state.m.data()[i] + (1.0 - kAdamBeta1) * grad.data()[i];
  const double gf = frobenius_norm(grad);
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * gf * gf;

  const Matrix mhat = scale(state.m, 1.0 / bc1);
  const double vhat = state.v / bc2;
  double alpha = lr / (std::sqrt(vhat) + kAdamEps);

  const SkewFactor w = build_skew(b, mhat);
  const double wnorm = spectral_norm_estimate(w, 3);
  if (wnorm > 0.0 && alpha * wnorm > 0.5) alpha = 0.5 / wnorm;

  b = cayley_fixed_point(w, b, alpha, n_c);
  drift = stiefel_drift(b);
}

struct TrainConfig {
  double lr_a = 2e-4;
  double lr_b = 1e-3;
  double weight_decay = 0.01;  // applied to A only
  int n_c = 5;
  int t_qr = 200;
  int k = 4;
  int r = 8;
  double alpha_lora = 16.0;
  int steps = 200;
  int batch_size = 4;
  std::uint64_t seed = 1;

  void validate(int n_layers) const {
    if (lr_a < 0 || lr_b < 0 || weight_decay < 0)
      throw ConfigError("TrainConfig: learning rates and decay must be >= 0");
    if (t_qr < 1 || r < 1 || steps < 0 || batch_size < 1)
      throw ConfigError("TrainConfig: t_qr, r, batch_size must be positive");
    if (k < 0 || k > n_layers)
      throw ConfigError("TrainConfig: k = " + std::to_string(k) + " outside [0, " +
                        std::to_string(n_layers) + "]");
  }
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double drift_max = 0.0;  // audited after the update, before retraction
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  AdapterSet adapters;
  double final_loss() const { return history.empty() ? 0.0 : history.back().loss; }
};

/// Phase-2 loop. Mini-batches are consumed cyclically from `data` in a
/// fixed order, so a run is a pure function of (weights, adapters, data,
/// cfg). Base weights are never written.
inline TrainResult train(const ModelConfig& cfg, const BaseWeights& weights,
                         AdapterSet adapters, std::span<const Batch> data,
                         const TrainConfig& tc) {
  tc.validate(cfg.n_layers);
  if (data.empty()) throw ConfigError("train: empty dataset");

  std::map<Slot, AdamWState> state_a;
  std::map<Slot, AdamWState> state_b_euclid;
  std::map<Slot, CayleyAdamState> state_b_cayley;

  TrainResult result;
  result.history.reserve(tc.steps);
  std::vector<Batch> group(tc.batch_size);

  for (int t = 1; t <= tc.steps; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int j = 0; j < tc.batch_size; ++j)
      group[j] = data[(static_cast<std::size_t>(t - 1) * tc.batch_size + j) % data.size()];

    LossBuild lb = batch_loss(cfg, weights, adapters, group);
    const double loss_value = lb.loss();
    if (!std::isfinite(loss_value))
      throw NumericalError("train: non-finite loss at step " + std::to_string(t));
    const GradientMap grads = lb.tape.backward(lb.loss_var);

    double drift_max = 0.0;
    for (auto& [slot, pair] : adapters.pairs) {
      const auto& [va, vb] = lb.leaves.adapter_ab.at(slot);
      const Matrix& ga = grads.at(va.id);
      const Matrix& gb = grads.at(vb.id);
      adamw_step(pair.a, ga, state_a[slot], tc.lr_a, tc.weight_decay);
      if (pair.constrained) {
        if (tc.n_c > 0)
          cayley_adam_step(pair.b, pair.drift, gb, state_b_cayley[slot], tc.lr_b, tc.n_c);
        drift_max = std::max(drift_max, pair.drift);
      } else {
        adamw_step(pair.b, gb, state_b_euclid[slot], tc.lr_a, 0.0);
      }
    }

    // Retraction: scheduled every t_qr steps, immediate past the bound.
    for (auto& [slot, pair] : adapters.pairs) {
      if (!pair.constrained) continue;
      if (t % tc.t_qr == 0 || pair.drift > kDriftBound) {
        StiefelPoint p = qr_retract(pair.b);
        pair.b = std::move(p.b);
        pair.drift = p.drift;
      }
    }

    const auto t1 = std::chrono::steady_clock::now();
    result.history.push_back(
        {t, loss_value, drift_max,
         std::chrono::duration<double, std::milli>(t1 - t0).count()});
  }

  result.adapters = std::move(adapters);
  return result;
}

}  // namespace fora
