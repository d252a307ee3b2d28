// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic planted-layer task and the experiment protocols. The task
// plants rank-limited perturbations at a known layer subset of a teacher;
// "which layers matter" is then ground truth, so layer-selection quality is
// measurable. Protocol runs are pure functions of (config, seed); arms and
// seeds execute in a small thread pool and results merge by index.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/config.hpp"
#include "fora/csv.hpp"
#include "fora/diagnostics.hpp"
#include "fora/fisher.hpp"
#include "fora/forward.hpp"
#include "fora/optim.hpp"

namespace fora {

struct PlantedTask {
  ModelConfig config;
  BaseWeights teacher;
  BaseWeights student_base;
  std::vector<Batch> train_data;
  std::vector<Batch> eval_data;
  std::vector<int> planted;  // sorted
};

/// Uniform k-subset of {0..n-1}, Fisher-Yates on a seeded stream.
inline std::vector<int> random_subset(int n, int k, RngStream& stream) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[stream.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<int> out(idx.begin(), idx.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t inter = 0;
  for (int x : a)
    if (std::binary_search(b.begin(), b.end(), x)) ++inter;
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Argmax next-token labels from a teacher forward; ties take the lowest id.
inline std::vector<int> teacher_labels(const ModelConfig& cfg, const BaseWeights& teacher,
                                       std::span<const int> tokens) {
  Batch probe;
  probe.tokens.assign(tokens.begin(), tokens.end());
  probe.targets.assign(tokens.size(), 0);
  const AdapterSet none;
  const Matrix logits = forward(cfg, teacher, none, probe).logits();
  std::vector<int> labels(tokens.size());
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    int best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(p, j) > logits(p, best)) best = static_cast<int>(j);
    labels[p] = best;
  }
  return labels;
}

/// Teacher = student_base plus scale * B A (B orthonormal, rank
/// perturb_rank) at all five modules of k_planted seeded layers; the data
/// is uniform random tokens labeled by the teacher's argmax.
///
/// The base uses the banded layout and each perturbation is confined to the
/// layer's own block, so the planted layers are the ground-truth carriers
/// of the label changes.
inline PlantedTask make_planted_task(const ModelConfig& cfg, int k_planted,
                                     int perturb_rank, double perturb_scale,
                                     int n_train, int n_eval, std::uint64_t seed) {
  cfg.validate();
  if (k_planted < 0 || k_planted > cfg.n_layers)
    throw ConfigError("make_planted_task: k_planted outside [0, n_layers]");

  PlantedTask task;
  task.config = cfg;
  task.student_base =
      init_base_weights(cfg, detail::splitmix64(seed ^ 0x7a53ULL), BaseInit::kBanded);
  {
    RngStream pick(seed, "task/planted");
    task.planted = random_subset(cfg.n_layers, k_planted, pick);
  }

  task.teacher = task.student_base;
  if (perturb_scale != 0.0) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(perturb_rank));
    for (int layer : task.planted) {
      const Band band = layer_band(cfg, layer);
      for (Module m : kAllModules) {
        // Block owned by this (layer, module) under the banded layout.
        int r0 = band.begin, rn = band.width, c0 = band.begin, cn = band.width;
        if (m == Module::kUp) {
          r0 = band.ff_begin;
          rn = band.ff_width;
        } else if (m == Module::kDown) {
          c0 = band.ff_begin;
          cn = band.ff_width;
        }
        if (perturb_rank > std::min(rn, cn))
          throw ConfigError("make_planted_task: perturb_rank " +
                            std::to_string(perturb_rank) + " exceeds block size " +
                            std::to_string(std::min(rn, cn)));
        RngStream sb(seed, stream_tag("task/perturb-b", layer, static_cast<int>(m)));
        RngStream sa(seed, stream_tag("task/perturb-a", layer, static_cast<int>(m)));
        const Matrix b = random_orthonormal(rn, perturb_rank, sb);
        const Matrix a = random_gaussian(perturb_rank, cn, sigma, sa);
        const Matrix delta = matmul(b, a);
        Matrix& w = weight_at(task.teacher, {layer, m});
        for (int i = 0; i < rn; ++i)
          for (int j = 0; j < cn; ++j) w(r0 + i, c0 + j) += perturb_scale * delta(i, j);
      }
    }
  }

  RngStream data(seed, "task/data");
  auto gen = [&](int count, std::vector<Batch>& out) {
    out.resize(count);
    for (Batch& b : out) {
      b.tokens.resize(cfg.seq_len);
      for (int i = 0; i < cfg.seq_len; ++i)
        b.tokens[i] = static_cast<int>(data.uniform_int(cfg.vocab));
      b.targets = teacher_labels(cfg, task.teacher, b.tokens);
    }
  };
  gen(n_train, task.train_data);
  gen(n_eval, task.eval_data);
  return task;
}

inline PlantedTask make_planted_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  return make_planted_task(cfg.model, cfg.k_planted, cfg.perturb_rank, cfg.perturb_scale,
                           cfg.train_sequences, cfg.eval_sequences, seed);
}

// ---------------------------------------------------------------------------
// Experiment arms.

enum class Selector { kAll, kFisher, kRandom };

struct ArmSpec {
  std::string name;
  Selector selector = Selector::kAll;
  bool stiefel = false;
  int k = 0;  // used by kFisher / kRandom
  int r = 8;
};

struct RunOutcome {
  std::string arm;
  std::uint64_t seed = 0;
  std::uint64_t param_count = 0;
  std::vector<int> selection;
  double init_eval_loss = 0.0;
  double final_train_loss = 0.0;
  double eval_loss = 0.0;
  double mean_erank_ratio = 0.0;
  double kl_drift = 0.0;
  double drift_max = 0.0;
  std::string status = "ok";  // "ok" or "aborted"
  int abort_step = -1;
};

/// Mean loss of the merged model over an evaluation set.
inline double eval_loss_of(const ModelConfig& cfg, const BaseWeights& weights,
                           const AdapterSet& adapters, std::span<const Batch> eval) {
  const BaseWeights merged = merge_into_base(weights, adapters);
  const AdapterSet none;
  double total = 0.0;
  for (const Batch& b : eval)
    total += loss(forward(cfg, merged, none, b).logits(), b.targets);
  return total / static_cast<double>(eval.size());
}

inline SelectionSet arm_selection(const PlantedTask& task, const ExperimentConfig& cfg,
                                  const ArmSpec& arm, std::uint64_t seed) {
  const ModelConfig& mc = task.config;
  switch (arm.selector) {
    case Selector::kAll:
      return selection_of_all(mc.n_layers);
    case Selector::kRandom: {
      RngStream stream(seed, "random-k");  // independent of the Fisher stream
      SelectionSet s = selection_from_layers(random_subset(mc.n_layers, arm.k, stream));
      s.provenance.seed = seed;
      return s;
    }
    case Selector::kFisher: {
      const int n = std::min<int>(cfg.fisher_batches,
                                  static_cast<int>(task.train_data.size()));
      const auto scores = score_layers(mc, task.student_base,
                                       std::span<const Batch>(task.train_data).subspan(0, n),
                                       n, cfg.fisher_variant, seed);
      SelectionSet s = select_topk(scores, arm.k);
      s.provenance = {n, seed, cfg.fisher_variant};
      return s;
    }
  }
  throw ConfigError("arm_selection: bad selector");
}

/// Runs one (arm, seed) cell end to end: select, init, train, diagnose.
inline RunOutcome run_arm(const PlantedTask& task, const ExperimentConfig& cfg,
                          const ArmSpec& arm, std::uint64_t seed) {
  const ModelConfig& mc = task.config;
  RunOutcome out;
  out.arm = arm.name;
  out.seed = seed;

  const SelectionSet selection = arm_selection(task, cfg, arm, seed);
  out.selection = selection.layers;
  out.param_count = trainable_param_count(mc, selection, arm.r);

  AdapterSet adapters =
      init_adapters(mc, selection, arm.r, cfg.alpha_lora, arm.stiefel, seed, cfg.b_init);
  out.init_eval_loss = eval_loss_of(mc, task.student_base, adapters, task.eval_data);

  TrainConfig tc = cfg.train_config();
  tc.k = selection.k;
  tc.r = arm.r;
  tc.seed = seed;

  TrainResult result;
  try {
    result = train(mc, task.student_base, std::move(adapters), task.train_data, tc);
  } catch (const NumericalError& e) {
    out.status = "aborted";
    out.abort_step = -1;
    const std::string msg = e.what();
    const auto pos = msg.rfind("step ");
    if (pos != std::string::npos) out.abort_step = std::atoi(msg.c_str() + pos + 5);
    return out;
  }

  out.final_train_loss = result.final_loss();
  out.eval_loss = eval_loss_of(mc, task.student_base, result.adapters, task.eval_data);
  const AdapterReport rep = report(mc, task.student_base, result.adapters, task.eval_data);
  out.mean_erank_ratio = rep.mean_erank_ratio;
  out.kl_drift = rep.kl_drift;
  out.drift_max = rep.drift_max;
  return out;
}

// ---------------------------------------------------------------------------
// Parallel execution: results land in a pre-sized vector, one slot per job.

template <typename Fn>
void parallel_for(std::size_t jobs, Fn fn) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&next, jobs, &fn] {
      for (std::size_t i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline std::vector<RunOutcome> run_grid(const PlantedTask& task, const ExperimentConfig& cfg,
                                        const std::vector<ArmSpec>& arms) {
  std::vector<std::pair<const ArmSpec*, std::uint64_t>> jobs;
  for (const ArmSpec& arm : arms)
    for (std::uint64_t seed : cfg.seeds) jobs.emplace_back(&arm, seed);
  std::vector<RunOutcome> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    out[i] = run_arm(task, cfg, *jobs[i].first, jobs[i].second);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Protocols.

inline std::vector<ArmSpec> ablation_arms(const ExperimentConfig& cfg) {
  return {
      {"lora_all", Selector::kAll, false, cfg.model.n_layers, cfg.r},
      {"fg_lora", Selector::kFisher, false, cfg.k, cfg.r},
      {"stiefel_lora", Selector::kAll, true, cfg.model.n_layers, cfg.r},
      {"fora", Selector::kFisher, true, cfg.k, cfg.r},
  };
}

/// 2x2 ablation: Fisher selection x Stiefel constraint.
inline std::vector<RunOutcome> run_ablation_2x2(const PlantedTask& task,
                                                const ExperimentConfig& cfg) {
  return run_grid(task, cfg, ablation_arms(cfg));
}

/// K sweep for the selection-only and full arms.
inline std::vector<RunOutcome> run_k_sweep(const PlantedTask& task,
                                           const ExperimentConfig& cfg) {
  std::vector<ArmSpec> arms;
  for (int k : cfg.k_values) {
    arms.push_back({"fg_lora@k" + std::to_string(k), Selector::kFisher, false, k, cfg.r});
    arms.push_back({"fora@k" + std::to_string(k), Selector::kFisher, true, k, cfg.r});
  }
  return run_grid(task, cfg, arms);
}

inline std::vector<ArmSpec> matched_budget_arms(const ExperimentConfig& cfg) {
  if (cfg.r % 2 != 0)
    throw ConfigError("matched budget: r must be even for the rank-halved arm");
  return {
      {"lora_full", Selector::kAll, false, cfg.model.n_layers, cfg.r},
      {"lora_rank_half", Selector::kAll, false, cfg.model.n_layers, cfg.r / 2},
      {"random_k", Selector::kRandom, false, cfg.k, cfg.r},
      {"fg_lora", Selector::kFisher, false, cfg.k, cfg.r},
      {"fora", Selector::kFisher, true, cfg.k, cfg.r},
  };
}

/// Matched-budget comparison at P0 (full) and P0/2 (all other arms). The
/// reduced arms must land on identical parameter counts or the protocol
/// refuses to run.
inline std::vector<RunOutcome> run_matched_budget(const PlantedTask& task,
                                                  const ExperimentConfig& cfg) {
  const std::vector<ArmSpec> arms = matched_budget_arms(cfg);
  const std::uint64_t full =
      trainable_param_count(task.config, selection_of_all(task.config.n_layers), cfg.r);
  std::uint64_t reduced = 0;
  for (const ArmSpec& arm : arms) {
    if (arm.name == "lora_full") continue;
    // Parameter count depends only on |selection| and r; build a dummy set
    // of the right size.
    std::vector<int> layers;
    const int k = arm.selector == Selector::kAll ? task.config.n_layers : arm.k;
    for (int i = 0; i < k; ++i) layers.push_back(i);
    const std::uint64_t count =
        trainable_param_count(task.config, selection_from_layers(layers), arm.r);
    if (reduced == 0) reduced = count;
    if (count != reduced)
      throw ConfigError("matched budget: arm " + arm.name + " has " +
                        std::to_string(count) + " params, expected " +
                        std::to_string(reduced));
  }
  if (2 * reduced != full)
    throw ConfigError("matched budget: reduced arms are not at P0/2 (P0 = " +
                      std::to_string(full) + ", reduced = " + std::to_string(reduced) +
                      "); use k = n_layers / 2");
  return run_grid(task, cfg, arms);
}

// ---------------------------------------------------------------------------
// Aggregation.

struct ArmSummary {
  std::string arm;
  std::uint64_t param_count = 0;
  int n_ok = 0, n_aborted = 0;
  double eval_loss_mean = 0.0, eval_loss_std = 0.0;
  double train_loss_mean = 0.0;
  double erank_ratio_mean = 0.0;
  double kl_mean = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median of a per-run metric over the ok runs of one arm.
template <typename Fn>
double arm_median(const std::vector<RunOutcome>& runs, const std::string& arm, Fn metric) {
  std::vector<double> vals;
  for (const RunOutcome& r : runs)
    if (r.arm == arm && r.status == "ok") vals.push_back(metric(r));
  return median_of(std::move(vals));
}

inline std::vector<ArmSummary> summarize(const std::vector<RunOutcome>& runs) {
  std::vector<ArmSummary> out;
  for (const RunOutcome& r : runs) {
    ArmSummary* s = nullptr;
    for (ArmSummary& cand : out)
      if (cand.arm == r.arm) s = &cand;
    if (!s) {
      out.push_back({});
      s = &out.back();
      s->arm = r.arm;
    }
    if (r.status != "ok") {
      ++s->n_aborted;
      continue;
    }
    s->param_count = r.param_count;
    ++s->n_ok;
    s->eval_loss_mean += r.eval_loss;
    s->train_loss_mean += r.final_train_loss;
    s->erank_ratio_mean += r.mean_erank_ratio;
    s->kl_mean += r.kl_drift;
  }
  for (ArmSummary& s : out) {
    if (s.n_ok == 0) continue;
    s.eval_loss_mean /= s.n_ok;
    s.train_loss_mean /= s.n_ok;
    s.erank_ratio_mean /= s.n_ok;
    s.kl_mean /= s.n_ok;
  }
  for (ArmSummary& s : out) {
    if (s.n_ok < 2) continue;
    double var = 0.0;
    int n = 0;
    for (const RunOutcome& r : runs)
      if (r.arm == s.arm && r.status == "ok") {
        var += (r.eval_loss - s.eval_loss_mean) * (r.eval_loss - s.eval_loss_mean);
        ++n;
      }
    s.eval_loss_std = std::sqrt(var / (n - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission.

using Provenance = std::vector<std::pair<std::string, std::string>>;

inline void write_runs_csv(const std::string& path, const std::vector<RunOutcome>& runs,
                           const Provenance& prov) {
  CsvWriter csv(path, "fora.runs.v1");
  for (const auto& [k, v] : prov) csv.comment(k, v);
  csv.header({"arm", "seed", "params", "selection", "init_eval_loss", "final_train_loss",
              "eval_loss", "mean_erank_ratio", "kl_drift", "drift_max", "status",
              "abort_step"});
  for (const RunOutcome& r : runs) {
    std::string sel;
    for (std::size_t i = 0; i < r.selection.size(); ++i)
      sel += (i ? "|" : "") + std::to_string(r.selection[i]);
    csv.row({r.arm, std::to_string(r.seed), std::to_string(r.param_count), sel,
             csv_double(r.init_eval_loss), csv_double(r.final_train_loss),
             csv_double(r.eval_loss), csv_double(r.mean_erank_ratio),
             csv_double(r.kl_drift), csv_double(r.drift_max), r.status,
             std::to_string(r.abort_step)});
  }
}

inline void write_summary_csv(const std::string& path, const std::string& schema,
                              const std::vector<RunOutcome>& runs, const Provenance& prov) {
  CsvWriter csv(path, schema);
  for (const auto& [k, v] : prov) csv.comment(k, v);
  bool any_aborted = false;
  for (const RunOutcome& r : runs) any_aborted |= r.status != "ok";
  if (any_aborted) csv.comment("warning", "partial results: at least one run aborted");
  csv.header({"arm", "params", "n_ok", "n_aborted", "eval_loss_mean", "eval_loss_std",
              "train_loss_mean", "erank_ratio_mean", "kl_mean"});
  for (const ArmSummary& s : summarize(runs))
    csv.row({s.arm, std::to_string(s.param_count), std::to_string(s.n_ok),
             std::to_string(s.n_aborted), csv_double(s.eval_loss_mean),
             csv_double(s.eval_loss_std), csv_double(s.train_loss_mean),
             csv_double(s.erank_ratio_mean), csv_double(s.kl_mean)});
}

inline void write_score_csv(const std::string& path, const std::vector<LayerScore>& scores,
                            const SelectionSet& selection, const Provenance& prov) {
  CsvWriter csv(path, "fora.score.v1");
  for (const auto& [k, v] : prov) csv.comment(k, v);
  csv.comment("fisher_batches", std::to_string(selection.provenance.n_batches));
  csv.comment("fisher_variant", fisher_variant_name(selection.provenance.variant));
  // Rank 1 = highest score; ties share the selection's low-index preference.
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&scores](int a, int b) {
    if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
    return a < b;
  });
  std::vector<int> rank(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos) + 1;
  csv.header({"layer", "score", "rank", "selected"});
  for (const LayerScore& s : scores)
    csv.row({std::to_string(s.layer), csv_double(s.score), std::to_string(rank[s.layer]),
             selection.contains(s.layer) ? "1" : "0"});
}

inline void write_train_log_csv(const std::string& path,
                                const std::vector<StepRecord>& history,
                                const Provenance& prov) {
  CsvWriter csv(path, "fora.train_log.v1");
  for (const auto& [k, v] : prov) csv.comment(k, v);
  csv.comment("note", "wall_ms is timing metadata; exclude it when comparing runs");
  csv.header({"step", "loss", "drift_max", "wall_ms"});
  for (const StepRecord& r : history)
    csv.row({std::to_string(r.step), csv_double(r.loss), csv_double(r.drift_max),
             csv_double(r.wall_ms)});
}

}  // namespace fora
