// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fora/errors.hpp"

namespace fora {

/// Per-layer importance score (mean squared gradient norm over batches).
struct LayerScore {
  int layer = 0;
  double score = 0.0;
};

enum class FisherVariant { kEmpirical, kTrueFisher };

inline const char* fisher_variant_name(FisherVariant v) {
  return v == FisherVariant::kEmpirical ? "empirical" : "true_fisher";
}

/// The frozen set of adapted layers, plus how it was produced. Immutable
/// once constructed; training never re-selects.
struct SelectionSet {
  std::vector<int> layers;  // sorted ascending
  int k = 0;
  struct Provenance {
    int n_batches = 0;
    std::uint64_t seed = 0;
    FisherVariant variant = FisherVariant::kEmpirical;
  } provenance;

  bool contains(int layer) const {
    return std::binary_search(layers.begin(), layers.end(), layer);
  }
};

inline SelectionSet selection_of_all(int n_layers) {
  SelectionSet s;
  s.k = n_layers;
  s.layers.resize(n_layers);
  for (int i = 0; i < n_layers; ++i) s.layers[i] = i;
  return s;
}

inline SelectionSet selection_from_layers(std::vector<int> layers) {
  SelectionSet s;
  std::sort(layers.begin(), layers.end());
  s.k = static_cast<int>(layers.size());
  s.layers = std::move(layers);
  return s;
}

/// Top-k scores; ties broken toward the lower layer index.
inline SelectionSet select_topk(const std::vector<LayerScore>& scores, int k) {
  const int l = static_cast<int>(scores.size());
  if (k < 1 || k > l)
    throw ConfigError("select_topk: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(l) + "]");
  std::vector<LayerScore> order = scores;
  std::sort(order.begin(), order.end(), [](const LayerScore& a, const LayerScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.layer < b.layer;
  });
  std::vector<int> layers;
  layers.reserve(k);
  for (int i = 0; i < k; ++i) layers.push_back(order[i].layer);
  std::sort(layers.begin(), layers.end());
  SelectionSet s;
  s.layers = std::move(layers);
  s.k = k;
  return s;
}

}  // namespace fora
