// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: little-endian binary tensors plus a JSON sidecar
// manifest. Layout:
//
//   magic   "FORACKPT"                     8 bytes
//   version u32                            (currently 1)
//   config  6 x u32                        n_layers d_model n_heads d_ff vocab seq_len
//   count   u32                            number of tensors
//   tensor  { u32 name_len; name bytes; u64 rows; u64 cols; f64 data[] } ...
//
// The sidecar at <path>.json lists tensor names/shapes and arbitrary extra
// metadata (selection, hyperparameters, provenance).
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fora/adapter.hpp"
#include "fora/errors.hpp"
#include "fora/matrix.hpp"
#include "fora/model.hpp"

namespace fora {

inline constexpr char kCheckpointMagic[8] = {'F', 'O', 'R', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

namespace detail {

template <typename T>
void put_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file " + path);
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const ModelConfig& cfg,
                             const std::vector<NamedTensor>& tensors,
                             nlohmann::json extra = nlohmann::json::object()) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_raw(out, kCheckpointVersion);
  for (const int v : {cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.vocab,
                      cfg.seq_len})
    detail::put_raw(out, static_cast<std::uint32_t>(v));
  detail::put_raw(out, static_cast<std::uint32_t>(tensors.size()));

  nlohmann::json manifest;
  manifest["format"] = "fora-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = {{"n_layers", cfg.n_layers}, {"d_model", cfg.d_model},
                        {"n_heads", cfg.n_heads},   {"d_ff", cfg.d_ff},
                        {"vocab", cfg.vocab},       {"seq_len", cfg.seq_len}};
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const NamedTensor& t : tensors) {
    detail::put_raw(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_raw(out, static_cast<std::uint64_t>(t.value.rows()));
    detail::put_raw(out, static_cast<std::uint64_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  if (!out) throw IoError("checkpoint: write failed for " + path);
  for (auto& [key, value] : extra.items()) manifest[key] = value;

  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw IoError("checkpoint: cannot open " + path + ".json for writing");
  side << manifest.dump(2) << "\n";
}

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Matrix> tensors;  // ordered by name
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  const auto version = detail::get_raw<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.config.n_layers = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  ck.config.d_model = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  ck.config.n_heads = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  ck.config.d_ff = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  ck.config.vocab = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  ck.config.seq_len = static_cast<int>(detail::get_raw<std::uint32_t>(in, path));
  const auto count = detail::get_raw<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_raw<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = detail::get_raw<std::uint64_t>(in, path);
    const auto cols = detail::get_raw<std::uint64_t>(in, path);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated tensor data in " + path);
    if (!m.all_finite())
      throw NumericalError("checkpoint: non-finite values in tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  return ck;
}

inline void save_base_weights(const std::string& path, const ModelConfig& cfg,
                              const BaseWeights& w,
                              nlohmann::json extra = nlohmann::json::object()) {
  std::vector<NamedTensor> tensors;
  tensors.push_back({"embed", w.embed});
  for (int l = 0; l < cfg.n_layers; ++l)
    for (Module m : kAllModules)
      tensors.push_back({Slot{l, m}.name(), weight_at(w, {l, m})});
  tensors.push_back({"head", w.head});
  write_checkpoint(path, cfg, tensors, std::move(extra));
}

inline BaseWeights load_base_weights(const std::string& path, ModelConfig* cfg_out = nullptr) {
  Checkpoint ck = read_checkpoint(path);
  ck.config.validate();
  BaseWeights w;
  auto take = [&ck, &path](const std::string& name) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end())
      throw IoError("checkpoint: missing tensor " + name + " in " + path);
    return std::move(it->second);
  };
  w.embed = take("embed");
  w.layers.resize(ck.config.n_layers);
  for (int l = 0; l < ck.config.n_layers; ++l)
    for (Module m : kAllModules)
      weight_at(w, {l, m}) = take(Slot{l, m}.name());
  w.head = take("head");
  if (cfg_out) *cfg_out = ck.config;
  return w;
}

inline void save_adapters(const std::string& path, const ModelConfig& cfg,
                          const AdapterSet& adapters,
                          nlohmann::json extra = nlohmann::json::object()) {
  std::vector<NamedTensor> tensors;
  for (const auto& [slot, pair] : adapters.pairs) {
    tensors.push_back({slot.name() + ".A", pair.a});
    tensors.push_back({slot.name() + ".B", pair.b});
  }
  nlohmann::json meta;
  meta["selection"] = adapters.selection.layers;
  meta["selection_provenance"] = {
      {"n_batches", adapters.selection.provenance.n_batches},
      {"seed", adapters.selection.provenance.seed},
      {"fisher_variant", fisher_variant_name(adapters.selection.provenance.variant)}};
  meta["hyper"] = {{"r", adapters.r}, {"alpha_lora", adapters.alpha_lora}};
  nlohmann::json constrained = nlohmann::json::object();
  for (const auto& [slot, pair] : adapters.pairs)
    constrained[slot.name()] = pair.constrained;
  meta["constrained"] = constrained;
  for (auto& [key, value] : extra.items()) meta[key] = value;
  write_checkpoint(path, cfg, tensors, std::move(meta));
}

inline AdapterSet load_adapters(const std::string& path, const ModelConfig& cfg) {
  Checkpoint ck = read_checkpoint(path);
  std::ifstream side(path + ".json");
  if (!side) throw IoError("checkpoint: missing manifest " + path + ".json");
  nlohmann::json manifest;
  side >> manifest;

  AdapterSet set;
  set.r = manifest.at("hyper").at("r").get<int>();
  set.alpha_lora = manifest.at("hyper").at("alpha_lora").get<double>();
  set.selection = selection_from_layers(
      manifest.at("selection").get<std::vector<int>>());
  if (manifest.contains("selection_provenance")) {
    const auto& prov = manifest.at("selection_provenance");
    set.selection.provenance.n_batches = prov.at("n_batches").get<int>();
    set.selection.provenance.seed = prov.at("seed").get<std::uint64_t>();
    set.selection.provenance.variant =
        std::string(prov.at("fisher_variant")) == "true_fisher"
            ? FisherVariant::kTrueFisher
            : FisherVariant::kEmpirical;
  }
  for (int layer : set.selection.layers) {
    for (Module m : kAllModules) {
      const Slot slot{layer, m};
      AdapterPair pair;
      pair.slot = slot;
      pair.scaling = set.alpha_lora / static_cast<double>(set.r);
      auto a = ck.tensors.find(slot.name() + ".A");
      auto b = ck.tensors.find(slot.name() + ".B");
      if (a == ck.tensors.end() || b == ck.tensors.end())
        throw IoError("checkpoint: missing adapter tensors for " + slot.name());
      pair.a = std::move(a->second);
      pair.b = std::move(b->second);
      pair.constrained = manifest.at("constrained").at(slot.name()).get<bool>();
      pair.drift = pair.constrained ? orthonormality_defect(pair.b) : 0.0;
      set.pairs.emplace(slot, std::move(pair));
    }
  }
  return set;
}

}  // namespace fora
