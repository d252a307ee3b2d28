// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fora/adapter.hpp"
#include "fora/forward.hpp"
#include "fora/model.hpp"

using namespace fora;

namespace {

ModelConfig desk_config() { return ModelConfig{}; }

Batch random_batch(const ModelConfig& cfg, RngStream& rng) {
  Batch b;
  b.tokens.resize(cfg.seq_len);
  b.targets.resize(cfg.seq_len);
  for (int i = 0; i < cfg.seq_len; ++i) {
    b.tokens[i] = static_cast<int>(rng.uniform_int(cfg.vocab));
    b.targets[i] = static_cast<int>(rng.uniform_int(cfg.vocab));
  }
  return b;
}

}  // namespace

TEST_CASE("zero-A adapters leave the logits untouched") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 101);
  RngStream rng(3, "batch");
  const Batch batch = random_batch(cfg, rng);

  const AdapterSet none;
  AdapterSet zero_a = init_adapters(cfg, selection_of_all(cfg.n_layers), 8, 16.0,
                                    /*constrained=*/true, 55);
  for (auto& [slot, pair] : zero_a.pairs) pair.a = Matrix(pair.a.rows(), pair.a.cols());

  const ForwardPass base = forward(cfg, w, none, batch);
  const ForwardPass with = forward(cfg, w, zero_a, batch);
  CHECK(max_abs_diff(base.logits(), with.logits()) <= 1e-14);
}

TEST_CASE("merged weights reproduce the adapter forward") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 7);
  const SelectionSet sel = selection_from_layers({1, 4, 6});
  const AdapterSet adapters = init_adapters(cfg, sel, 8, 16.0, true, 99);
  RngStream rng(5, "batch");
  const Batch batch = random_batch(cfg, rng);

  const BaseWeights merged = merge_into_base(w, adapters);
  const AdapterSet none;
  const ForwardPass via_adapter = forward(cfg, w, adapters, batch);
  const ForwardPass via_merge = forward(cfg, merged, none, batch);
  CHECK(max_abs_diff(via_adapter.logits(), via_merge.logits()) <= 1e-10);
}

TEST_CASE("hand-traced single-layer single-head forward") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 4;
  cfg.n_heads = 1;
  cfg.d_ff = 4;
  cfg.vocab = 3;
  cfg.seq_len = 2;

  BaseWeights w = init_base_weights(cfg, 1);
  RngStream rng(77, "hand");
  w.embed = random_gaussian(3, 4, 1.0, rng);
  w.layers[0].wq = random_gaussian(4, 4, 0.5, rng);
  w.layers[0].wk = random_gaussian(4, 4, 0.5, rng);
  w.layers[0].wv = random_gaussian(4, 4, 0.5, rng);
  w.layers[0].wup = random_gaussian(4, 4, 0.5, rng);
  w.layers[0].wdown = random_gaussian(4, 4, 0.5, rng);
  w.head = random_gaussian(4, 3, 0.5, rng);

  Batch batch;
  batch.tokens = {0, 2};
  batch.targets = {1, 1};
  const AdapterSet none;
  const ForwardPass fp = forward(cfg, w, none, batch);

  // Independent trace with plain loops.
  using Vec = std::vector<double>;
  auto ln = [](const Vec& x) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= x.size();
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= x.size();
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      y[i] = (x[i] - mu) / std::sqrt(var + 1e-5);
    return y;
  };
  auto matvec = [](const Matrix& m, const Vec& x) {
    Vec y(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) y[i] += m(i, j) * x[j];
    return y;
  };
  auto dot = [](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  Vec x0(4), x1(4);
  for (int j = 0; j < 4; ++j) x0[j] = w.embed(0, j);
  for (int j = 0; j < 4; ++j) x1[j] = w.embed(2, j);

  const Vec h0 = ln(x0), h1 = ln(x1);
  const Vec q0 = matvec(w.layers[0].wq, h0), q1 = matvec(w.layers[0].wq, h1);
  const Vec k0 = matvec(w.layers[0].wk, h0), k1 = matvec(w.layers[0].wk, h1);
  const Vec v0 = matvec(w.layers[0].wv, h0), v1 = matvec(w.layers[0].wv, h1);

  // Position 0 attends to itself only; position 1 softmaxes over {0, 1}.
  Vec a0 = v0;
  const double s10 = dot(q1, k0) / 2.0, s11 = dot(q1, k1) / 2.0;  // sqrt(dh)=2
  const double m = std::max(s10, s11);
  const double e0 = std::exp(s10 - m), e1 = std::exp(s11 - m);
  Vec a1(4);
  for (int j = 0; j < 4; ++j) a1[j] = (e0 * v0[j] + e1 * v1[j]) / (e0 + e1);

  for (int j = 0; j < 4; ++j) {
    x0[j] += a0[j];
    x1[j] += a1[j];
  }
  for (Vec* x : {&x0, &x1}) {
    const Vec h = ln(*x);
    Vec up = matvec(w.layers[0].wup, h);
    for (double& u : up) u = std::max(0.0, u);
    const Vec down = matvec(w.layers[0].wdown, up);
    for (int j = 0; j < 4; ++j) (*x)[j] += down[j];
  }
  const Vec f0 = ln(x0), f1 = ln(x1);
  Matrix expect(2, 3);
  for (int j = 0; j < 3; ++j) {
    double l0 = 0.0, l1 = 0.0;
    for (int i = 0; i < 4; ++i) {
      l0 += f0[i] * w.head(i, j);
      l1 += f1[i] * w.head(i, j);
    }
    expect(0, j) = l0;
    expect(1, j) = l1;
  }
  CHECK(max_abs_diff(fp.logits(), expect) <= 1e-12);
}

TEST_CASE("loss of uniform logits is log vocab") {
  Matrix logits(4, 64);  // all zeros: uniform distribution
  const std::vector<int> targets{0, 5, 63, 17};
  CHECK(loss(logits, targets) == Catch::Approx(std::log(64.0)).epsilon(1e-12));
  CHECK(loss(logits, targets) == Catch::Approx(4.158883).margin(1e-6));
}

TEST_CASE("loss of a confident correct prediction is near zero") {
  Matrix logits(2, 8);
  logits(0, 3) = 50.0;
  logits(1, 1) = 50.0;
  const std::vector<int> targets{3, 1};
  CHECK(loss(logits, targets) >= 0.0);
  CHECK(loss(logits, targets) <= 1e-12);
}

TEST_CASE("loss matches the unfused softmax formula") {
  RngStream rng(11, "loss");
  const Matrix logits = random_gaussian(6, 9, 2.0, rng);
  std::vector<int> targets(6);
  for (auto& t : targets) t = static_cast<int>(rng.uniform_int(9));

  double expect = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += std::exp(logits(i, j));
    expect -= std::log(std::exp(logits(i, targets[i])) / s);
  }
  expect /= 6.0;
  CHECK(loss(logits, targets) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("tape cross entropy agrees with the pure loss function") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 21);
  RngStream rng(13, "batch");
  const Batch batch = random_batch(cfg, rng);
  const AdapterSet none;
  const ForwardPass fp = forward(cfg, w, none, batch);
  LossBuild lb = batch_loss(cfg, w, none, std::span<const Batch>{&batch, 1});
  CHECK(lb.loss() == Catch::Approx(loss(fp.logits(), batch.targets)).epsilon(1e-13));
}

TEST_CASE("base_layer_gradients covers exactly the five projections per layer") {
  ModelConfig cfg = desk_config();
  cfg.n_layers = 3;
  const BaseWeights w = init_base_weights(cfg, 31);
  RngStream rng(17, "batch");
  const Batch batch = random_batch(cfg, rng);

  const auto grads = base_layer_gradients(cfg, w, batch);
  REQUIRE(grads.size() == 3);
  for (int l = 0; l < 3; ++l) {
    for (Module m : kAllModules) {
      const Matrix& g = grads[l][static_cast<int>(m)];
      const auto [d_out, d_in] = cfg.module_dims(m);
      REQUIRE(g.rows() == static_cast<std::size_t>(d_out));
      REQUIRE(g.cols() == static_cast<std::size_t>(d_in));
      REQUIRE(g.all_finite());
    }
  }
}

TEST_CASE("base_layer_gradients equals a manual backward restriction") {
  ModelConfig cfg = desk_config();
  cfg.n_layers = 2;
  const BaseWeights w = init_base_weights(cfg, 41);
  RngStream rng(19, "batch");
  const Batch batch = random_batch(cfg, rng);

  const auto per_layer = base_layer_gradients(cfg, w, batch);

  const AdapterSet none;
  LossBuild lb = batch_loss(cfg, w, none, std::span<const Batch>{&batch, 1});
  const GradientMap all = lb.tape.backward(lb.loss_var);
  for (int l = 0; l < 2; ++l)
    for (Module m : kAllModules) {
      const Matrix& expect = all.at(lb.leaves.layer_weights[l][static_cast<int>(m)].id);
      CHECK(max_abs_diff(per_layer[l][static_cast<int>(m)], expect) == 0.0);
    }
}

TEST_CASE("single-token batch is well-defined and finite") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 51);
  Batch b;
  b.tokens = {5};
  b.targets = {9};
  const auto grads = base_layer_gradients(cfg, w, b);
  for (const auto& layer : grads)
    for (const Matrix& g : layer) REQUIRE(g.all_finite());
}

TEST_CASE("forward rejects adapters that do not fit their slot") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 61);
  AdapterSet bad = init_adapters(cfg, selection_from_layers({2}), 8, 16.0, true, 62);
  auto& pair = bad.pairs.begin()->second;
  pair.a = Matrix(8, 32);  // wrong d_in
  RngStream rng(23, "batch");
  const Batch batch = random_batch(cfg, rng);
  CHECK_THROWS_MATCHES(forward(cfg, w, bad, batch), DimensionError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("layer2.q")));
}

TEST_CASE("base weights serialization is reproducible and order-sensitive") {
  const ModelConfig cfg = desk_config();
  const BaseWeights a = init_base_weights(cfg, 71);
  const BaseWeights b = init_base_weights(cfg, 71);
  const BaseWeights c = init_base_weights(cfg, 72);
  CHECK(base_weights_sha256(a) == base_weights_sha256(b));
  CHECK(base_weights_sha256(a) != base_weights_sha256(c));
}

TEST_CASE("forward determinism: identical logits across repeated builds") {
  const ModelConfig cfg = desk_config();
  const BaseWeights w = init_base_weights(cfg, 81);
  const AdapterSet adapters =
      init_adapters(cfg, selection_from_layers({0, 3}), 4, 8.0, true, 82);
  RngStream rng(29, "batch");
  const Batch batch = random_batch(cfg, rng);
  const ForwardPass f1 = forward(cfg, w, adapters, batch);
  const ForwardPass f2 = forward(cfg, w, adapters, batch);
  CHECK(max_abs_diff(f1.logits(), f2.logits()) == 0.0);
}
