// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// The frozen base model: a small decoder-only transformer with causal
// attention, pre-layernorm, and residual connections. Each layer carries
// exactly five projection matrices {q, k, v, up, down}; the embedding and
// head are base-only and never adapted.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"
#include "fora/rng.hpp"
#include "fora/sha256.hpp"

namespace fora {

enum class Module : int { kQ = 0, kK = 1, kV = 2, kUp = 3, kDown = 4 };

inline constexpr int kNumModules = 5;
inline constexpr std::array<Module, kNumModules> kAllModules{
    Module::kQ, Module::kK, Module::kV, Module::kUp, Module::kDown};

inline const char* module_name(Module m) {
  switch (m) {
    case Module::kQ: return "q";
    case Module::kK: return "k";
    case Module::kV: return "v";
    case Module::kUp: return "up";
    case Module::kDown: return "down";
  }
  return "?";
}

inline Module module_from_name(const std::string& s) {
  for (Module m : kAllModules)
    if (s == module_name(m)) return m;
  throw ConfigError("unknown module name: " + s);
}

/// One adapted projection site: (layer, module).
struct Slot {
  int layer = 0;
  Module module = Module::kQ;

  bool operator==(const Slot& o) const = default;
  bool operator<(const Slot& o) const {
    if (layer != o.layer) return layer < o.layer;
    return static_cast<int>(module) < static_cast<int>(o.module);
  }
  std::string name() const {
    return "layer" + std::to_string(layer) + "." + module_name(module);
  }
};

struct ModelConfig {
  int n_layers = 8;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int vocab = 64;
  int seq_len = 32;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab < 1 || seq_len < 1)
      throw ConfigError("ModelConfig: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }

  int head_dim() const { return d_model / n_heads; }

  /// (d_out, d_in) of the projection at `module`.
  std::pair<int, int> module_dims(Module m) const {
    switch (m) {
      case Module::kUp: return {d_ff, d_model};
      case Module::kDown: return {d_model, d_ff};
      default: return {d_model, d_model};
    }
  }
};

struct BaseWeights {
  struct Layer {
    Matrix wq, wk, wv;  // d_model x d_model
    Matrix wup;         // d_ff x d_model
    Matrix wdown;       // d_model x d_ff
  };
  Matrix embed;  // vocab x d_model
  std::vector<Layer> layers;
  Matrix head;  // d_model x vocab
};

inline const Matrix& weight_at(const BaseWeights& w, Slot s) {
  const BaseWeights::Layer& l = w.layers[s.layer];
  switch (s.module) {
    case Module::kQ: return l.wq;
    case Module::kK: return l.wk;
    case Module::kV: return l.wv;
    case Module::kUp: return l.wup;
    case Module::kDown: return l.wdown;
  }
  return l.wq;
}

inline Matrix& weight_at(BaseWeights& w, Slot s) {
  return const_cast<Matrix&>(weight_at(static_cast<const BaseWeights&>(w), s));
}

/// How fresh base weights are laid out.
///
/// kDense: plain Gaussian projections. Layers of such a model are
/// statistically exchangeable, so no layer carries more task information
/// than any other.
///
/// kBanded: each layer's five projections live on a per-layer block of the
/// residual stream (layer l reads and writes d_model/L dimensions of its
/// own). This gives layers distinct functional roles, the way pretraining
/// differentiates layers in a real model, and makes cross-layer gradients
/// nearly independent. The planted-layer experiments use this layout.
enum class BaseInit { kDense, kBanded };

/// Residual-stream dimensions owned by `layer` under the banded layout.
struct Band {
  int begin = 0, width = 0;      // slice of d_model
  int ff_begin = 0, ff_width = 0;  // slice of d_ff
};

inline Band layer_band(const ModelConfig& cfg, int layer) {
  Band b;
  b.width = cfg.d_model / cfg.n_layers;
  b.begin = layer * b.width;
  b.ff_width = cfg.d_ff / cfg.n_layers;
  b.ff_begin = layer * b.ff_width;
  return b;
}

inline BaseWeights init_base_weights(const ModelConfig& cfg, std::uint64_t seed,
                                     BaseInit layout = BaseInit::kDense) {
  cfg.validate();
  if (layout == BaseInit::kBanded &&
      (cfg.d_model % cfg.n_layers != 0 || cfg.d_ff % cfg.n_layers != 0 ||
       (cfg.d_model / cfg.n_layers) < 1))
    throw ConfigError("init_base_weights: banded layout needs d_model and d_ff "
                      "divisible by n_layers");

  BaseWeights w;
  {
    RngStream s(seed, "base/embed");
    w.embed = random_gaussian(cfg.vocab, cfg.d_model, 1.0, s);
  }
  w.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    RngStream sq(seed, stream_tag("base/q", l));
    RngStream sk(seed, stream_tag("base/k", l));
    RngStream sv(seed, stream_tag("base/v", l));
    RngStream su(seed, stream_tag("base/up", l));
    RngStream sd(seed, stream_tag("base/down", l));
    if (layout == BaseInit::kDense) {
      const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
      const double down_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));
      w.layers[l].wq = random_gaussian(cfg.d_model, cfg.d_model, proj_std, sq);
      w.layers[l].wk = random_gaussian(cfg.d_model, cfg.d_model, proj_std, sk);
      w.layers[l].wv = random_gaussian(cfg.d_model, cfg.d_model, proj_std, sv);
      w.layers[l].wup = random_gaussian(cfg.d_ff, cfg.d_model, proj_std, su);
      w.layers[l].wdown = random_gaussian(cfg.d_model, cfg.d_ff, down_std, sd);
    } else {
      const Band band = layer_band(cfg, l);
      const double attn_std = 1.0 / std::sqrt(static_cast<double>(band.width));
      const double down_std = 1.0 / std::sqrt(static_cast<double>(band.ff_width));
      auto block = [](std::size_t rows, std::size_t cols, int r0, int rn, int c0, int cn,
                      double std, RngStream& s) {
        Matrix m(rows, cols);
        const Matrix g = random_gaussian(rn, cn, std, s);
        for (int i = 0; i < rn; ++i)
          for (int j = 0; j < cn; ++j) m(r0 + i, c0 + j) = g(i, j);
        return m;
      };
      w.layers[l].wq = block(cfg.d_model, cfg.d_model, band.begin, band.width,
                             band.begin, band.width, attn_std, sq);
      w.layers[l].wk = block(cfg.d_model, cfg.d_model, band.begin, band.width,
                             band.begin, band.width, attn_std, sk);
      w.layers[l].wv = block(cfg.d_model, cfg.d_model, band.begin, band.width,
                             band.begin, band.width, attn_std, sv);
      w.layers[l].wup = block(cfg.d_ff, cfg.d_model, band.ff_begin, band.ff_width,
                              band.begin, band.width, attn_std, su);
      w.layers[l].wdown = block(cfg.d_model, cfg.d_ff, band.begin, band.width,
                                band.ff_begin, band.ff_width, down_std, sd);
    }
  }
  {
    RngStream s(seed, "base/head");
    w.head = random_gaussian(cfg.d_model, cfg.vocab,
                             1.0 / std::sqrt(static_cast<double>(cfg.d_model)), s);
  }
  return w;
}

/// Canonical byte serialization (names, shapes, raw little-endian doubles);
/// the base-freeze contract compares SHA-256 of this.
inline std::vector<unsigned char> serialize_base_weights(const BaseWeights& w) {
  std::vector<unsigned char> out;
  auto put = [&out](const std::string& name, const Matrix& m) {
    out.insert(out.end(), name.begin(), name.end());
    const std::uint64_t dims[2] = {m.rows(), m.cols()};
    const auto* d = reinterpret_cast<const unsigned char*>(dims);
    out.insert(out.end(), d, d + sizeof(dims));
    const auto* p = reinterpret_cast<const unsigned char*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(double));
  };
  put("embed", w.embed);
  for (std::size_t l = 0; l < w.layers.size(); ++l)
    for (Module m : kAllModules)
      put(Slot{static_cast<int>(l), m}.name(), weight_at(w, {static_cast<int>(l), m}));
  put("head", w.head);
  return out;
}

inline std::string base_weights_sha256(const BaseWeights& w) {
  return sha256_hex(serialize_base_weights(w));
}

/// One training sequence: input tokens and next-token labels, equal length.
struct Batch {
  std::vector<int> tokens;
  std::vector<int> targets;

  void validate(const ModelConfig& cfg) const {
    if (tokens.size() != targets.size())
      throw ConfigError("Batch: tokens and targets lengths disagree");
    if (tokens.empty() || tokens.size() > static_cast<std::size_t>(cfg.seq_len))
      throw ConfigError("Batch: length " + std::to_string(tokens.size()) +
                        " outside [1, " + std::to_string(cfg.seq_len) + "]");
    for (int t : tokens)
      if (t < 0 || t >= cfg.vocab) throw ConfigError("Batch: token id out of range");
    for (int t : targets)
      if (t < 0 || t >= cfg.vocab) throw ConfigError("Batch: target id out of range");
  }
};

}  // namespace fora
