// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc measurements over trained adapters: entropy effective rank of
// the unscaled delta spectra, weight-change magnitude as deployed, KL drift
// of the output distribution against the base model, and the cross-layer
// gradient-correlation probe.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/fisher.hpp"
#include "fora/forward.hpp"
#include "fora/svd.hpp"

namespace fora {

/// exp(H(sigma / sum sigma)) with natural-log entropy and 0 log 0 := 0.
/// Scale-invariant; equals the count of equally-used directions.
inline double effective_rank(const Spectrum& spectrum) {
  double total = 0.0;
  for (double s : spectrum.values) {
    if (s < 0.0) throw NumericalError("effective_rank: negative singular value");
    total += s;
  }
  if (total <= 0.0)
    throw NumericalError("effective_rank: all-zero spectrum has no defined rank");
  double h = 0.0;
  for (double s : spectrum.values) {
    if (s == 0.0) continue;
    const double p = s / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

/// Mean over all positions of KL(p_trained || p_base) between the two
/// models' next-token distributions on an evaluation set.
inline double kl_output_drift(const ModelConfig& cfg, const BaseWeights& base,
                              const BaseWeights& trained, std::span<const Batch> eval) {
  if (eval.empty()) throw ConfigError("kl_output_drift: empty evaluation set");
  const AdapterSet none;
  double total = 0.0;
  std::size_t positions = 0;
  for (const Batch& batch : eval) {
    const Matrix lt = forward(cfg, trained, none, batch).logits();
    const Matrix lb = forward(cfg, base, none, batch).logits();
    for (std::size_t i = 0; i < lt.rows(); ++i) {
      double mt = lt(i, 0), mb = lb(i, 0);
      for (std::size_t j = 1; j < lt.cols(); ++j) {
        mt = std::max(mt, lt(i, j));
        mb = std::max(mb, lb(i, j));
      }
      double zt = 0.0, zb = 0.0;
      for (std::size_t j = 0; j < lt.cols(); ++j) {
        zt += std::exp(lt(i, j) - mt);
        zb += std::exp(lb(i, j) - mb);
      }
      const double log_zt = mt + std::log(zt), log_zb = mb + std::log(zb);
      double kl = 0.0;
      for (std::size_t j = 0; j < lt.cols(); ++j) {
        const double log_pt = lt(i, j) - log_zt;
        const double log_pb = lb(i, j) - log_zb;
        kl += std::exp(log_pt) * (log_pt - log_pb);
      }
      total += kl;
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

struct SlotReport {
  Slot slot;
  Spectrum spectrum;        // singular values of unscaled b * a
  double erank = 0.0;
  double erank_ratio = 0.0;          // erank / r
  double dw_frob = 0.0;              // ||scaling * b * a||_F, as deployed
  double dw_frob_unscaled = 0.0;     // ||b * a||_F
};

struct AdapterReport {
  std::vector<SlotReport> slots;
  double mean_erank = 0.0;
  double mean_erank_ratio = 0.0;
  double total_dw_frob = 0.0;
  double kl_drift = 0.0;
  double drift_max = 0.0;  // orthogonality drift across constrained pairs
};

/// Spectra are measured on the unscaled product (the forward scaling is a
/// scalar and cancels in the effective rank); the weight-change magnitude
/// is reported for the deployed, scaled delta.
inline AdapterReport report(const ModelConfig& cfg, const BaseWeights& weights,
                            const AdapterSet& adapters, std::span<const Batch> eval) {
  AdapterReport rep;
  for (const auto& [slot, pair] : adapters.pairs) {
    SlotReport sr;
    sr.slot = slot;
    const Matrix delta = pair.delta_unscaled();
    sr.spectrum = singular_values(delta);
    sr.dw_frob_unscaled = frobenius_norm(delta);
    sr.dw_frob = pair.scaling * sr.dw_frob_unscaled;
    sr.erank = effective_rank(sr.spectrum);
    sr.erank_ratio = sr.erank / static_cast<double>(adapters.r);
    rep.mean_erank += sr.erank;
    rep.mean_erank_ratio += sr.erank_ratio;
    rep.total_dw_frob += sr.dw_frob;
    rep.drift_max = std::max(rep.drift_max, pair.drift);
    rep.slots.push_back(std::move(sr));
  }
  if (!rep.slots.empty()) {
    rep.mean_erank /= static_cast<double>(rep.slots.size());
    rep.mean_erank_ratio /= static_cast<double>(rep.slots.size());
  }
  rep.kl_drift = kl_output_drift(cfg, weights, merge_into_base(weights, adapters), eval);
  return rep;
}

struct CrossLayerStats {
  double mean_offdiag = 0.0;  // mean |pearson| over layer pairs
  double max_offdiag = 0.0;
  double ratio = 0.0;  // mean |offdiag| / mean diag (diag == 1)
};

/// Pearson correlation between per-layer gradient-norm series across
/// calibration batches; off-diagonal summary only, no threshold attached.
inline CrossLayerStats cross_layer_gradient_correlation(const ModelConfig& cfg,
                                                        const BaseWeights& weights,
                                                        std::span<const Batch> calib) {
  if (calib.size() < 2)
    throw ConfigError("cross_layer_gradient_correlation: need >= 2 batches");
  const int l = cfg.n_layers;
  CrossLayerStats stats;
  if (l < 2) return stats;

  // norms[layer][batch]
  std::vector<std::vector<double>> norms(l, std::vector<double>(calib.size()));
  for (std::size_t bi = 0; bi < calib.size(); ++bi) {
    const auto grads = base_layer_gradients(cfg, weights, calib[bi]);
    for (int li = 0; li < l; ++li)
      norms[li][bi] = std::sqrt(layer_score_contribution(grads[li]));
  }

  std::vector<double> mean(l, 0.0), sd(l, 0.0);
  for (int li = 0; li < l; ++li) {
    for (double v : norms[li]) mean[li] += v;
    mean[li] /= static_cast<double>(calib.size());
    for (double v : norms[li]) sd[li] += (v - mean[li]) * (v - mean[li]);
    sd[li] = std::sqrt(sd[li]);
  }

  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < l; ++i) {
    for (int j = i + 1; j < l; ++j) {
      double cov = 0.0;
      for (std::size_t bi = 0; bi < calib.size(); ++bi)
        cov += (norms[i][bi] - mean[i]) * (norms[j][bi] - mean[j]);
      const double denom = sd[i] * sd[j];
      const double corr = denom > 0.0 ? cov / denom : 0.0;
      sum += std::abs(corr);
      stats.max_offdiag = std::max(stats.max_offdiag, std::abs(corr));
      ++count;
    }
  }
  stats.mean_offdiag = sum / static_cast<double>(count);
  stats.ratio = stats.mean_offdiag;  // diagonal of a correlation matrix is 1
  return stats;
}

}  // namespace fora
