// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a flat key = value file (# comments allowed)
// covering the model, adapters, training, Fisher scoring, the planted task,
// and experiment grids. Unknown keys are rejected. The canonical
// serialization (fixed key order, full precision) feeds the provenance
// hash, so identical configs hash identically across runs.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/errors.hpp"
#include "fora/model.hpp"
#include "fora/optim.hpp"
#include "fora/selection.hpp"
#include "fora/sha256.hpp"

namespace fora {

struct ExperimentConfig {
  ModelConfig model;

  // Adapters.
  int r = 8;
  double alpha_lora = 16.0;
  BInit b_init = BInit::kOrthonormal;

  // Training.
  double lr_a = 2e-4;
  double lr_b = 1e-3;
  double weight_decay = 0.01;
  int n_c = 5;
  int t_qr = 200;
  int k = 4;
  int steps = 150;
  int batch_size = 4;

  // Fisher scoring.
  int fisher_batches = 32;
  FisherVariant fisher_variant = FisherVariant::kEmpirical;

  // Planted task.
  int k_planted = 4;
  int perturb_rank = 4;
  double perturb_scale = 1.0;
  int train_sequences = 256;
  int eval_sequences = 64;

  // Experiment grids.
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> k_values{2, 4, 6, 8};

  std::uint64_t seed = 1;

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.lr_a = lr_a;
    tc.lr_b = lr_b;
    tc.weight_decay = weight_decay;
    tc.n_c = n_c;
    tc.t_qr = t_qr;
    tc.k = k;
    tc.r = r;
    tc.alpha_lora = alpha_lora;
    tc.steps = steps;
    tc.batch_size = batch_size;
    tc.seed = seed;
    return tc;
  }

  void validate() const {
    model.validate();
    if (r < 1 || alpha_lora <= 0) throw ConfigError("config: r and alpha_lora must be positive");
    if (k < 1 || k > model.n_layers)
      throw ConfigError("config: k outside [1, n_layers]");
    if (k_planted < 1 || k_planted > model.n_layers)
      throw ConfigError("config: k_planted outside [1, n_layers]");
    if (perturb_rank < 1) throw ConfigError("config: perturb_rank must be >= 1");
    if (fisher_batches < 1) throw ConfigError("config: fisher_batches must be >= 1");
    if (train_sequences < 1 || eval_sequences < 1)
      throw ConfigError("config: sequence counts must be >= 1");
    if (seeds.empty()) throw ConfigError("config: seeds list is empty");
    for (int kv : k_values)
      if (kv < 1 || kv > model.n_layers)
        throw ConfigError("config: k_values entry outside [1, n_layers]");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_num(const std::string& key, const std::string& value);

template <>
inline int parse_num<int>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: bad integer for '" + key + "': " + value);
  }
}

template <>
inline double parse_num<double>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: bad number for '" + key + "': " + value);
  }
}

template <>
inline std::uint64_t parse_num<std::uint64_t>(const std::string& key,
                                              const std::string& value) {
  try {
    std::size_t pos;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: bad seed for '" + key + "': " + value);
  }
}

}  // namespace detail

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_num;
  if (key == "n_layers") cfg.model.n_layers = parse_num<int>(key, value);
  else if (key == "d_model") cfg.model.d_model = parse_num<int>(key, value);
  else if (key == "n_heads") cfg.model.n_heads = parse_num<int>(key, value);
  else if (key == "d_ff") cfg.model.d_ff = parse_num<int>(key, value);
  else if (key == "vocab") cfg.model.vocab = parse_num<int>(key, value);
  else if (key == "seq_len") cfg.model.seq_len = parse_num<int>(key, value);
  else if (key == "r") cfg.r = parse_num<int>(key, value);
  else if (key == "alpha_lora") cfg.alpha_lora = parse_num<double>(key, value);
  else if (key == "b_init") {
    if (value == "orthonormal") cfg.b_init = BInit::kOrthonormal;
    else if (value == "zero") cfg.b_init = BInit::kZero;
    else throw ConfigError("config: b_init must be orthonormal or zero, got " + value);
  } else if (key == "lr_a") cfg.lr_a = parse_num<double>(key, value);
  else if (key == "lr_b") cfg.lr_b = parse_num<double>(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_num<double>(key, value);
  else if (key == "n_c") cfg.n_c = parse_num<int>(key, value);
  else if (key == "t_qr") cfg.t_qr = parse_num<int>(key, value);
  else if (key == "k") cfg.k = parse_num<int>(key, value);
  else if (key == "steps") cfg.steps = parse_num<int>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_num<int>(key, value);
  else if (key == "fisher_batches") cfg.fisher_batches = parse_num<int>(key, value);
  else if (key == "fisher_variant") {
    if (value == "empirical") cfg.fisher_variant = FisherVariant::kEmpirical;
    else if (value == "true_fisher") cfg.fisher_variant = FisherVariant::kTrueFisher;
    else throw ConfigError("config: fisher_variant must be empirical or true_fisher");
  } else if (key == "k_planted") cfg.k_planted = parse_num<int>(key, value);
  else if (key == "perturb_rank") cfg.perturb_rank = parse_num<int>(key, value);
  else if (key == "perturb_scale") cfg.perturb_scale = parse_num<double>(key, value);
  else if (key == "train_sequences") cfg.train_sequences = parse_num<int>(key, value);
  else if (key == "eval_sequences") cfg.eval_sequences = parse_num<int>(key, value);
  else if (key == "seed") cfg.seed = parse_num<std::uint64_t>(key, value);
  else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& item : detail::split_list(value))
      cfg.seeds.push_back(parse_num<std::uint64_t>(key, item));
  } else if (key == "k_values") {
    cfg.k_values.clear();
    for (const auto& item : detail::split_list(value))
      cfg.k_values.push_back(parse_num<int>(key, item));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

inline std::string num_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Canonical serialization: fixed key order, full-precision numbers.
inline std::string canonical_config_string(const ExperimentConfig& c) {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("n_layers", std::to_string(c.model.n_layers));
  kv("d_model", std::to_string(c.model.d_model));
  kv("n_heads", std::to_string(c.model.n_heads));
  kv("d_ff", std::to_string(c.model.d_ff));
  kv("vocab", std::to_string(c.model.vocab));
  kv("seq_len", std::to_string(c.model.seq_len));
  kv("r", std::to_string(c.r));
  kv("alpha_lora", detail::num_str(c.alpha_lora));
  kv("b_init", b_init_name(c.b_init));
  kv("lr_a", detail::num_str(c.lr_a));
  kv("lr_b", detail::num_str(c.lr_b));
  kv("weight_decay", detail::num_str(c.weight_decay));
  kv("n_c", std::to_string(c.n_c));
  kv("t_qr", std::to_string(c.t_qr));
  kv("k", std::to_string(c.k));
  kv("steps", std::to_string(c.steps));
  kv("batch_size", std::to_string(c.batch_size));
  kv("fisher_batches", std::to_string(c.fisher_batches));
  kv("fisher_variant", fisher_variant_name(c.fisher_variant));
  kv("k_planted", std::to_string(c.k_planted));
  kv("perturb_rank", std::to_string(c.perturb_rank));
  kv("perturb_scale", detail::num_str(c.perturb_scale));
  kv("train_sequences", std::to_string(c.train_sequences));
  kv("eval_sequences", std::to_string(c.eval_sequences));
  {
    std::string list;
    for (std::size_t i = 0; i < c.seeds.size(); ++i)
      list += (i ? "," : "") + std::to_string(c.seeds[i]);
    kv("seeds", list);
  }
  {
    std::string list;
    for (std::size_t i = 0; i < c.k_values.size(); ++i)
      list += (i ? "," : "") + std::to_string(c.k_values[i]);
    kv("k_values", list);
  }
  kv("seed", std::to_string(c.seed));
  return s;
}

inline std::string config_sha256(const ExperimentConfig& c) {
  return sha256_hex(canonical_config_string(c));
}

}  // namespace fora
