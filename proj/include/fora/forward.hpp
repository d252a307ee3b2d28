// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable forward pass of the toy transformer. One tape can hold
// several sequences sharing the same weight leaves; the training loop uses
// that to average the loss over a mini-batch in a single backward pass.
#pragma once

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/autodiff.hpp"
#include "fora/model.hpp"

namespace fora {

/// Leaf handles of one tape build, for pulling gradients out afterwards.
struct ModelLeaves {
  Var embed, head;
  std::vector<std::array<Var, kNumModules>> layer_weights;
  std::map<Slot, std::pair<Var, Var>> adapter_ab;  // slot -> (a, b)
};

namespace detail {

/// x * W^T plus, when an adapter sits at the slot, scaling * (x A^T) B^T.
inline Var projected(Tape& t, Var x, Var w, const AdapterSet& adapters, Slot slot,
                     const ModelLeaves& leaves) {
  Var out = t.matmul(x, w, false, true);
  const auto it = adapters.pairs.find(slot);
  if (it == adapters.pairs.end()) return out;
  const auto& [va, vb] = leaves.adapter_ab.at(slot);
  const Var delta = t.matmul(t.matmul(x, va, false, true), vb, false, true);
  return t.add(out, t.scale(delta, it->second.scaling));
}

}  // namespace detail

/// Registers every weight (and adapter factor) as a tape leaf.
inline ModelLeaves register_leaves(Tape& t, const ModelConfig& cfg,
                                   const BaseWeights& weights, const AdapterSet& adapters) {
  ModelLeaves leaves;
  leaves.embed = t.leaf(weights.embed);
  leaves.layer_weights.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l)
    for (Module m : kAllModules)
      leaves.layer_weights[l][static_cast<int>(m)] = t.leaf(weight_at(weights, {l, m}));
  leaves.head = t.leaf(weights.head);
  for (const auto& [slot, pair] : adapters.pairs) {
    const auto [d_out, d_in] = cfg.module_dims(slot.module);
    if (pair.a.cols() != static_cast<std::size_t>(d_in) ||
        pair.b.rows() != static_cast<std::size_t>(d_out) ||
        pair.a.rows() != pair.b.cols())
      throw DimensionError("forward: adapter at " + slot.name() + " has shapes a=" +
                           pair.a.shape_str() + " b=" + pair.b.shape_str() +
                           " against slot " + std::to_string(d_out) + "x" +
                           std::to_string(d_in));
    leaves.adapter_ab.emplace(slot, std::pair{t.leaf(pair.a), t.leaf(pair.b)});
  }
  return leaves;
}

/// Logits (T x vocab) for one token sequence, reusing already-registered
/// leaves. Pre-LN blocks: x += attn(ln(x)); x += mlp(ln(x)); final ln.
inline Var sequence_logits(Tape& t, const ModelConfig& cfg, const AdapterSet& adapters,
                           const ModelLeaves& leaves, std::span<const int> tokens) {
  const int dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = t.embed_lookup(leaves.embed, tokens);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = leaves.layer_weights[l];
    const Var h = t.layernorm_rows(x);
    const Var q = detail::projected(t, h, w[0], adapters, {l, Module::kQ}, leaves);
    const Var k = detail::projected(t, h, w[1], adapters, {l, Module::kK}, leaves);
    const Var v = detail::projected(t, h, w[2], adapters, {l, Module::kV}, leaves);

    Var attn_out;
    for (int head = 0; head < cfg.n_heads; ++head) {
      const std::size_t off = static_cast<std::size_t>(head) * dh;
      const Var qh = t.slice_cols(q, off, dh);
      const Var kh = t.slice_cols(k, off, dh);
      const Var vh = t.slice_cols(v, off, dh);
      const Var scores = t.scale(t.matmul(qh, kh, false, true), attn_scale);
      const Var probs = t.softmax_rows(scores, /*causal=*/true);
      const Var mixed = t.matmul(probs, vh);
      attn_out = head == 0 ? mixed : t.concat_cols(attn_out, mixed);
    }
    x = t.add(x, attn_out);

    const Var h2 = t.layernorm_rows(x);
    const Var up = t.relu(detail::projected(t, h2, w[3], adapters, {l, Module::kUp}, leaves));
    const Var down = detail::projected(t, up, w[4], adapters, {l, Module::kDown}, leaves);
    x = t.add(x, down);
  }
  return t.matmul(t.layernorm_rows(x), leaves.head);
}

struct ForwardPass {
  Tape tape;
  ModelLeaves leaves;
  Var logits_var;
  const Matrix& logits() const { return tape.value(logits_var); }
};

inline ForwardPass forward(const ModelConfig& cfg, const BaseWeights& weights,
                           const AdapterSet& adapters, const Batch& batch) {
  batch.validate(cfg);
  ForwardPass fp;
  fp.leaves = register_leaves(fp.tape, cfg, weights, adapters);
  fp.logits_var = sequence_logits(fp.tape, cfg, adapters, fp.leaves, batch.tokens);
  return fp;
}

/// Mean cross-entropy over a group of sequences on one tape (single set of
/// weight leaves, so backward() yields mini-batch-averaged gradients).
struct LossBuild {
  Tape tape;
  ModelLeaves leaves;
  Var loss_var;
  double loss() const { return tape.value(loss_var)(0, 0); }
};

inline LossBuild batch_loss(const ModelConfig& cfg, const BaseWeights& weights,
                            const AdapterSet& adapters, std::span<const Batch> group) {
  if (group.empty()) throw ConfigError("batch_loss: empty batch group");
  LossBuild b;
  b.leaves = register_leaves(b.tape, cfg, weights, adapters);
  Var total;
  for (std::size_t i = 0; i < group.size(); ++i) {
    group[i].validate(cfg);
    const Var logits = sequence_logits(b.tape, cfg, adapters, b.leaves, group[i].tokens);
    const Var ce = b.tape.cross_entropy(logits, group[i].targets);
    total = i == 0 ? ce : b.tape.add(total, ce);
  }
  b.loss_var = group.size() == 1
                   ? total
                   : b.tape.scale(total, 1.0 / static_cast<double>(group.size()));
  return b;
}

/// Mean next-token cross-entropy of fixed logits; no tape involved.
inline double loss(const Matrix& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows())
    throw DimensionError("loss: " + std::to_string(targets.size()) +
                         " targets for logits " + logits.shape_str());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double m = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, logits(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) s += std::exp(logits(i, j) - m);
    total += m + std::log(s) - logits(i, targets[i]);
  }
  return total / static_cast<double>(logits.rows());
}

/// Gradients of the five projection matrices of every layer on one batch of
/// the pure base model (no adapters attached). Embedding and head gradients
/// are computed but not part of any per-layer entry.
inline std::vector<std::array<Matrix, kNumModules>> base_layer_gradients(
    const ModelConfig& cfg, const BaseWeights& weights, const Batch& batch) {
  batch.validate(cfg);
  const AdapterSet none;
  LossBuild b = batch_loss(cfg, weights, none, std::span<const Batch>{&batch, 1});
  const GradientMap grads = b.tape.backward(b.loss_var);
  std::vector<std::array<Matrix, kNumModules>> out(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l)
    for (Module m : kAllModules)
      out[l][static_cast<int>(m)] =
          grads.at(b.leaves.layer_weights[l][static_cast<int>(m)].id);
  return out;
}

}  // namespace fora
