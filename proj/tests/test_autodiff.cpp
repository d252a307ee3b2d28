// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "fora/autodiff.hpp"
#include "fora/matrix.hpp"

using namespace fora;

namespace {

// Builds the graph from the given leaf values and returns a scalar Var.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces any matrix Var to a scalar with fixed random weights, so that
// gradient checks see a non-degenerate adjoint at every entry.
Var scalarize(Tape& t, Var v, RngStream& rng) {
  const Var wl = t.leaf(random_gaussian(1, v.rows, 1.0, rng));
  const Var wr = t.leaf(random_gaussian(v.cols, 1, 1.0, rng));
  return t.matmul(t.matmul(wl, v), wr);
}

double eval(const GraphFn& fn, const std::vector<Matrix>& leaves) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& m : leaves) vars.push_back(t.leaf(m));
  const Var out = fn(t, vars);
  return t.value(out)(0, 0);
}

// Central-difference check on 5 pseudo-random entries of every leaf.
void gradient_check(const GraphFn& fn, std::vector<Matrix> leaves,
                    double h = 1e-5, double tol = 1e-5) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : leaves) vars.push_back(t.leaf(m));
  const Var out = fn(t, vars);
  const GradientMap grads = t.backward(out);

  RngStream pick(1234, "fd-entries");
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Matrix& g = grads.at(vars[li].id);
    const std::size_t samples = std::min<std::size_t>(5, leaves[li].size());
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t idx = pick.uniform_int(leaves[li].size());
      const double orig = leaves[li].data()[idx];
      leaves[li].data()[idx] = orig + h;
      const double fp = eval(fn, leaves);
      leaves[li].data()[idx] = orig - h;
      const double fm = eval(fn, leaves);
      leaves[li].data()[idx] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = g.data()[idx];
      const double rel = std::abs(an - fd) / (std::abs(an) + 1e-8);
      INFO("leaf " << li << " entry " << idx << " analytic " << an << " fd " << fd);
      REQUIRE(rel <= tol);
    }
  }
}

}  // namespace

TEST_CASE("add with zero is identity on the forward value") {
  Tape t;
  RngStream rng(5, "add0");
  const Matrix x = random_gaussian(3, 4, 1.0, rng);
  const Var vx = t.leaf(x);
  const Var vz = t.leaf(Matrix(3, 4));
  const Var sum = t.add(vx, vz);
  CHECK(max_abs_diff(t.value(sum), x) == 0.0);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape t;
  Matrix x(1, 7);
  for (std::size_t j = 0; j < 7; ++j) x(0, j) = 3.25;
  const Var y = t.softmax_rows(t.leaf(x));
  double s = 0.0;
  for (std::size_t j = 0; j < 7; ++j) {
    CHECK(t.value(y)(0, j) == Catch::Approx(1.0 / 7.0).margin(1e-15));
    s += t.value(y)(0, j);
  }
  CHECK(std::abs(s - 1.0) <= 1e-15);
}

TEST_CASE("causal softmax zeroes the future and normalizes the past") {
  Tape t;
  RngStream rng(6, "causal");
  const Matrix x = random_gaussian(5, 5, 1.0, rng);
  const Var y = t.softmax_rows(t.leaf(x), /*causal=*/true);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (j > i) CHECK(t.value(y)(i, j) == 0.0);
      s += t.value(y)(i, j);
    }
    CHECK(s == Catch::Approx(1.0).margin(1e-14));
  }
}

TEST_CASE("cross entropy of a confident correct prediction") {
  Tape t;
  Matrix logits(1, 4);
  logits(0, 0) = 10.0;  // target class, large margin
  const std::vector<int> target{0};
  const Var l = t.cross_entropy(t.leaf(logits), target);
  // -log p with p = e^10 / (e^10 + 3)
  const double p = std::exp(10.0) / (std::exp(10.0) + 3.0);
  CHECK(t.value(l)(0, 0) == Catch::Approx(-std::log(p)).epsilon(1e-12));
  CHECK(t.value(l)(0, 0) <= 2e-4);
}

TEST_CASE("backward of sum(W x) is the broadcast outer product") {
  Tape t;
  RngStream rng(7, "sumwx");
  const Matrix w = random_gaussian(3, 4, 1.0, rng);
  Matrix x = random_gaussian(4, 1, 1.0, rng);
  const Var vw = t.leaf(w);
  const Var vx = t.leaf(x);
  Matrix ones(1, 3);
  for (std::size_t j = 0; j < 3; ++j) ones(0, j) = 1.0;
  const Var loss = t.matmul(t.leaf(ones), t.matmul(vw, vx));
  const GradientMap g = t.backward(loss);
  const Matrix& gw = g.at(vw.id);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(gw(i, j) == Catch::Approx(x(j, 0)).margin(1e-14));
}

TEST_CASE("backward of half squared residual, scalar case") {
  // loss = 1/2 ||W x - y||^2 with W = [[1]], x = [2], y = [0]: dW = 4.
  Tape t;
  Matrix w(1, 1), x(1, 1), y(1, 1);
  w(0, 0) = 1.0;
  x(0, 0) = 2.0;
  y(0, 0) = 0.0;
  const Var vw = t.leaf(w);
  const Var r = t.add(t.matmul(vw, t.leaf(x)), t.scale(t.leaf(y), -1.0));
  const Var loss = t.scale(t.matmul(r, r, /*trans_a=*/true), 0.5);
  const GradientMap g = t.backward(loss);
  CHECK(g.at(vw.id)(0, 0) == Catch::Approx(4.0).margin(1e-14));
}

TEST_CASE("finite differences: matmul, all transpose combinations") {
  RngStream rng(11, "fd-mm");
  for (const auto [ta, tb] : {std::pair{false, false}, {false, true},
                              {true, false}, {true, true}}) {
    const Matrix a = ta ? random_gaussian(5, 3, 1.0, rng) : random_gaussian(3, 5, 1.0, rng);
    const Matrix b = tb ? random_gaussian(4, 5, 1.0, rng) : random_gaussian(5, 4, 1.0, rng);
    gradient_check(
        [ta = ta, tb = tb](Tape& t, const std::vector<Var>& v) {
          RngStream local(99, "fd-mm-w");
          return scalarize(t, t.matmul(v[0], v[1], ta, tb), local);
        },
        {a, b});
  }
}

TEST_CASE("finite differences: add, scale, relu") {
  RngStream rng(13, "fd-misc");
  Matrix x = random_gaussian(4, 6, 1.0, rng);
  Matrix y = random_gaussian(4, 6, 1.0, rng);
  // Keep relu inputs away from the kink.
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 1e-2) x.data()[i] += 0.05;

  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(98, "w");
        return scalarize(t, t.add(v[0], v[1]), local);
      },
      {x, y});
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(97, "w");
        return scalarize(t, t.scale(v[0], -1.7), local);
      },
      {x});
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(96, "w");
        return scalarize(t, t.relu(v[0]), local);
      },
      {x});
}

TEST_CASE("finite differences: softmax_rows, plain and causal") {
  RngStream rng(17, "fd-sm");
  const Matrix x = random_gaussian(5, 5, 1.0, rng);
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(95, "w");
        return scalarize(t, t.softmax_rows(v[0]), local);
      },
      {x});
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(94, "w");
        return scalarize(t, t.softmax_rows(v[0], true), local);
      },
      {x});
}

TEST_CASE("finite differences: layernorm_rows") {
  RngStream rng(19, "fd-ln");
  const Matrix x = random_gaussian(4, 8, 1.0, rng);
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(93, "w");
        return scalarize(t, t.layernorm_rows(v[0]), local);
      },
      {x});
}

TEST_CASE("finite differences: embed_lookup") {
  RngStream rng(23, "fd-emb");
  const Matrix table = random_gaussian(9, 5, 1.0, rng);
  const std::vector<int> tokens{3, 1, 3, 0};  // repeated id exercises scatter-add
  gradient_check(
      [&tokens](Tape& t, const std::vector<Var>& v) {
        RngStream local(92, "w");
        return scalarize(t, t.embed_lookup(v[0], tokens), local);
      },
      {table});
}

TEST_CASE("finite differences: cross_entropy") {
  RngStream rng(29, "fd-ce");
  const Matrix logits = random_gaussian(6, 10, 1.0, rng);
  const std::vector<int> targets{0, 3, 9, 2, 2, 7};
  gradient_check(
      [&targets](Tape& t, const std::vector<Var>& v) {
        return t.cross_entropy(v[0], targets);
      },
      {logits});
}

TEST_CASE("finite differences: slice_cols and concat_cols") {
  RngStream rng(31, "fd-slice");
  const Matrix x = random_gaussian(3, 8, 1.0, rng);
  const Matrix y = random_gaussian(3, 5, 1.0, rng);
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(91, "w");
        return scalarize(t, t.slice_cols(v[0], 2, 4), local);
      },
      {x});
  gradient_check(
      [](Tape& t, const std::vector<Var>& v) {
        RngStream local(90, "w");
        return scalarize(t, t.concat_cols(v[0], v[1]), local);
      },
      {x, y});
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(37, "lin");
  const Matrix logits = random_gaussian(4, 6, 1.0, rng);
  const std::vector<int> t1{0, 1, 2, 3}, t2{5, 4, 3, 2};
  const double a = 0.7, b = -1.3;

  Tape tape;
  const Var v = tape.leaf(logits);
  const Var l1 = tape.cross_entropy(v, t1);
  const Var l2 = tape.cross_entropy(v, t2);
  const Var combo = tape.add(tape.scale(l1, a), tape.scale(l2, b));

  const Matrix g1 = tape.backward(l1).at(v.id);
  const Matrix g2 = tape.backward(l2).at(v.id);
  const Matrix gc = tape.backward(combo).at(v.id);

  Matrix expect = fora::scale(g1, a);
  axpy(expect, b, g2);
  CHECK(max_abs_diff(gc, expect) <= 1e-12);
}

TEST_CASE("shape errors name the op kind and shapes") {
  Tape t;
  const Var a = t.leaf(Matrix(2, 3));
  const Var b = t.leaf(Matrix(4, 5));
  CHECK_THROWS_MATCHES(t.matmul(a, b), DimensionError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("matmul") &&
                           Catch::Matchers::ContainsSubstring("2x3")));
  CHECK_THROWS_AS(t.add(a, b), DimensionError);
  CHECK_THROWS_AS(t.backward(a), DimensionError);  // non-scalar loss
}

TEST_CASE("unused leaves get zero gradients of the right shape") {
  Tape t;
  RngStream rng(41, "unused");
  const Var used = t.leaf(random_gaussian(2, 2, 1.0, rng));
  const Var unused = t.leaf(random_gaussian(3, 7, 1.0, rng));
  const Var loss = t.matmul(t.matmul(t.leaf(Matrix(1, 2)), used), t.leaf(Matrix(2, 1)));
  const GradientMap g = t.backward(loss);
  const Matrix& gu = g.at(unused.id);
  CHECK(gu.rows() == 3);
  CHECK(gu.cols() == 7);
  CHECK(frobenius_norm(gu) == 0.0);
}
