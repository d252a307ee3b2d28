// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Phase-1 calibration: per-layer diagonal empirical Fisher scores over N
// mini-batches on the frozen base model, and the frozen top-K selection.
// The true-Fisher variant replaces observed labels with labels sampled from
// the model's own softmax, one per position, seeded.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fora/forward.hpp"
#include "fora/model.hpp"
#include "fora/selection.hpp"

namespace fora {

/// Squared-gradient mass of one layer: sum of ||g||_F^2 over its tensors.
inline double layer_score_contribution(std::span<const Matrix> grads) {
  double s = 0.0;
  for (const Matrix& g : grads) {
    const double f = frobenius_norm(g);
    s += f * f;
  }
  return s;
}

/// F_l = (1/n) sum over batches of the squared gradient norm of layer l's
/// five projections. Gradients are squared and accumulated per batch, in
/// batch order, with no accumulation across batches.
inline std::vector<LayerScore> score_layers(const ModelConfig& cfg,
                                            const BaseWeights& weights,
                                            std::span<const Batch> calib, int n,
                                            FisherVariant variant,
                                            std::uint64_t label_seed = 0) {
  if (calib.empty()) throw ConfigError("score_layers: empty calibration set");
  if (n < 1 || static_cast<std::size_t>(n) > calib.size())
    throw ConfigError("score_layers: n = " + std::to_string(n) + " outside [1, " +
                      std::to_string(calib.size()) + "]");

  std::vector<double> acc(cfg.n_layers, 0.0);
  for (int bi = 0; bi < n; ++bi) {
    Batch batch = calib[bi];
    if (variant == FisherVariant::kTrueFisher) {
      const AdapterSet none;
      const ForwardPass fp = forward(cfg, weights, none, batch);
      const Matrix& logits = fp.logits();
      RngStream labels(label_seed, stream_tag("fisher-labels", bi));
      for (std::size_t p = 0; p < logits.rows(); ++p) {
        double m = logits(p, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, logits(p, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(p, j) - m);
        const double u = labels.uniform() * z;
        double cum = 0.0;
        int pick = static_cast<int>(logits.cols()) - 1;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
          cum += std::exp(logits(p, j) - m);
          if (u < cum) {
            pick = static_cast<int>(j);
            break;
          }
        }
        batch.targets[p] = pick;
      }
    }
    const auto grads = base_layer_gradients(cfg, weights, batch);
    for (int l = 0; l < cfg.n_layers; ++l)
      acc[l] += layer_score_contribution(grads[l]);
  }

  std::vector<LayerScore> out(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    out[l].layer = l;
    out[l].score = acc[l] / static_cast<double>(n);
    if (!std::isfinite(out[l].score))
      throw NumericalError("score_layers: non-finite score at layer " + std::to_string(l));
  }
  return out;
}

}  // namespace fora
