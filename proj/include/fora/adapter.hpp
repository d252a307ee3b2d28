// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// LoRA factor pairs and their lifecycle: initialization, parameter
// accounting, and merge-to-base export. The delta at a slot is
// scaling * b * a with scaling = alpha_lora / r; `constrained` marks the
// pairs whose b lives on the Stiefel manifold during training.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"
#include "fora/model.hpp"
#include "fora/qr.hpp"
#include "fora/selection.hpp"

namespace fora {

enum class BInit { kOrthonormal, kZero };

inline const char* b_init_name(BInit b) {
  return b == BInit::kOrthonormal ? "orthonormal" : "zero";
}

struct AdapterPair {
  Matrix a;            // r x d_in
  Matrix b;            // d_out x r
  double scaling = 1;  // alpha_lora / r
  Slot slot;
  bool constrained = false;
  double drift = 0.0;  // ||b^T b - I||_F from the last audit (constrained only)

  /// scaling * b * a, the delta as deployed.
  Matrix delta() const { return scale(matmul(b, a), scaling); }
  /// b * a without the forward scaling; spectra are measured on this.
  Matrix delta_unscaled() const { return matmul(b, a); }
};

struct AdapterSet {
  std::map<Slot, AdapterPair> pairs;  // ordered: deterministic iteration
  SelectionSet selection;
  int r = 0;
  double alpha_lora = 0.0;

  bool empty() const { return pairs.empty(); }
};

/// Adapters at all five modules of every selected layer. A is Gaussian with
/// sigma = 1/sqrt(r); B is the Q factor of a Gaussian (column-orthonormal)
/// or zero, per `b_init`. Unconstrained baselines share the orthonormal
/// init by default so ablations isolate the optimizer.
inline AdapterSet init_adapters(const ModelConfig& cfg, const SelectionSet& selection,
                                int r, double alpha_lora, bool constrained,
                                std::uint64_t seed, BInit b_init = BInit::kOrthonormal) {
  if (r < 1) throw ConfigError("init_adapters: rank must be >= 1");
  AdapterSet set;
  set.selection = selection;
  set.r = r;
  set.alpha_lora = alpha_lora;
  const double sigma = 1.0 / std::sqrt(static_cast<double>(r));
  for (int layer : selection.layers) {
    if (layer < 0 || layer >= cfg.n_layers)
      throw ConfigError("init_adapters: selected layer " + std::to_string(layer) +
                        " outside model with " + std::to_string(cfg.n_layers) + " layers");
    for (Module m : kAllModules) {
      const Slot slot{layer, m};
      const auto [d_out, d_in] = cfg.module_dims(m);
      if (r > std::min(d_out, d_in))
        throw ConfigError("init_adapters: rank " + std::to_string(r) +
                          " too large for slot " + slot.name() + " (" +
                          std::to_string(d_out) + "x" + std::to_string(d_in) + ")");
      AdapterPair p;
      p.slot = slot;
      p.scaling = alpha_lora / static_cast<double>(r);
      p.constrained = constrained;
      {
        RngStream sa(seed, stream_tag("adapter/a", layer, static_cast<int>(m)));
        p.a = random_gaussian(r, d_in, sigma, sa);
      }
      if (b_init == BInit::kOrthonormal) {
        RngStream sb(seed, stream_tag("adapter/b", layer, static_cast<int>(m)));
        p.b = random_orthonormal(d_out, r, sb);
      } else {
        p.b = Matrix(d_out, r);
      }
      p.drift = 0.0;
      set.pairs.emplace(slot, std::move(p));
    }
  }
  return set;
}

/// Exact count from per-module shapes: sum over layers and modules of
/// r * (d_in + d_out).
inline std::uint64_t param_count_for_shapes(
    const std::vector<std::pair<int, int>>& module_dims_out_in, int n_layers, int r) {
  std::uint64_t per_layer = 0;
  for (const auto& [d_out, d_in] : module_dims_out_in)
    per_layer += static_cast<std::uint64_t>(r) *
                 (static_cast<std::uint64_t>(d_in) + static_cast<std::uint64_t>(d_out));
  return per_layer * static_cast<std::uint64_t>(n_layers);
}

inline std::uint64_t trainable_param_count(const ModelConfig& cfg,
                                           const SelectionSet& selection, int r) {
  std::vector<std::pair<int, int>> dims;
  for (Module m : kAllModules) dims.push_back(cfg.module_dims(m));
  return param_count_for_shapes(dims, selection.k, r);
}

/// New weights with W0 + scaling * b * a folded in at every adapted slot.
/// Tensors at non-selected layers are copied bit-identically.
inline BaseWeights merge_into_base(const BaseWeights& weights, const AdapterSet& adapters) {
  BaseWeights merged = weights;
  for (const auto& [slot, pair] : adapters.pairs) {
    Matrix& w = weight_at(merged, slot);
    if (pair.b.rows() != w.rows() || pair.a.cols() != w.cols())
      throw DimensionError("merge_into_base: adapter at " + slot.name() +
                           " has shape " + pair.b.shape_str() + "*" + pair.a.shape_str() +
                           " against weight " + w.shape_str());
    axpy(w, pair.scaling, matmul(pair.b, pair.a));
  }
  return merged;
}

}  // namespace fora
