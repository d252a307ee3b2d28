// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over matrix ops. A tape is built
// forward (each record caches its value), then backward() walks the nodes in
// reverse and accumulates adjoints in a fixed order. Tapes are single-owner
// and rebuilt per step; backward is a pure function of a finished tape.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fora/errors.hpp"
#include "fora/matrix.hpp"

namespace fora {

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kScale,
  kRelu,
  kSoftmaxRows,
  kLayernormRows,
  kEmbedLookup,
  kCrossEntropy,
  kSliceCols,
  kConcatCols,
};

struct Var {
  int id = -1;
  std::size_t rows = 0, cols = 0;
};

/// Leaf Var id -> gradient of the loss w.r.t. that leaf.
using GradientMap = std::unordered_map<int, Matrix>;

class Tape {
 public:
  static constexpr double kLayernormEps = 1e-5;

  Var leaf(Matrix value) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// opA(a) * opB(b) where opX transposes when the flag is set.
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    const std::size_t ar = trans_a ? a.cols : a.rows, ac = trans_a ? a.rows : a.cols;
    const std::size_t br = trans_b ? b.cols : b.rows, bc = trans_b ? b.rows : b.cols;
    if (ac != br)
      throw DimensionError("tape matmul: inner dimensions disagree, " + shape_of(a) +
                           (trans_a ? "^T" : "") + " vs " + shape_of(b) +
                           (trans_b ? "^T" : ""));
    (void)ar; (void)bc;
    Node n;
    n.kind = OpKind::kMatmul;
    n.a = a.id;
    n.b = b.id;
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.value = product(value(a), trans_a, value(b), trans_b);
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    if (a.rows != b.rows || a.cols != b.cols)
      throw DimensionError("tape add: shapes disagree, " + shape_of(a) + " vs " + shape_of(b));
    Node n;
    n.kind = OpKind::kAdd;
    n.a = a.id;
    n.b = b.id;
    n.value = fora::add(value(a), value(b));
    return push(std::move(n));
  }

  Var scale(Var a, double s) {
    Node n;
    n.kind = OpKind::kScale;
    n.a = a.id;
    n.scalar = s;
    n.value = fora::scale(value(a), s);
    return push(std::move(n));
  }

  Var relu(Var a) {
    Node n;
    n.kind = OpKind::kRelu;
    n.a = a.id;
    n.value = value(a);
    for (std::size_t i = 0; i < n.value.size(); ++i)
      if (n.value.data()[i] < 0.0) n.value.data()[i] = 0.0;
    return push(std::move(n));
  }

  /// Row-wise softmax; with `causal` set (square input), entry (i, j) for
  /// j > i is excluded from the distribution and outputs exactly zero.
  Var softmax_rows(Var a, bool causal = false) {
    if (causal && a.rows != a.cols)
      throw DimensionError("tape softmax_rows: causal mask needs a square input, got " +
                           shape_of(a));
    Node n;
    n.kind = OpKind::kSoftmaxRows;
    n.a = a.id;
    n.causal = causal;
    const Matrix& x = value(a);
    n.value = Matrix(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t limit = causal ? i + 1 : x.cols();
      double m = x(i, 0);
      for (std::size_t j = 1; j < limit; ++j) m = std::max(m, x(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        const double e = std::exp(x(i, j) - m);
        n.value(i, j) = e;
        s += e;
      }
      for (std::size_t j = 0; j < limit; ++j) n.value(i, j) /= s;
    }
    return push(std::move(n));
  }

  /// Row-wise (x - mean) / sqrt(var + eps); no learned gain or bias.
  Var layernorm_rows(Var a) {
    Node n;
    n.kind = OpKind::kLayernormRows;
    n.a = a.id;
    const Matrix& x = value(a);
    const std::size_t c = x.cols();
    n.value = Matrix(x.rows(), c);
    n.aux_vec.resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += x(i, j);
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x(i, j) - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + kLayernormEps);
      n.aux_vec[i] = inv;
      for (std::size_t j = 0; j < c; ++j) n.value(i, j) = (x(i, j) - mu) * inv;
    }
    return push(std::move(n));
  }

  /// Rows of `table` gathered by token id.
  Var embed_lookup(Var table, std::span<const int> tokens) {
    const Matrix& t = value(table);
    Node n;
    n.kind = OpKind::kEmbedLookup;
    n.a = table.id;
    n.tokens.assign(tokens.begin(), tokens.end());
    n.value = Matrix(tokens.size(), t.cols());
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      const int id = n.tokens[p];
      if (id < 0 || static_cast<std::size_t>(id) >= t.rows())
        throw DimensionError("tape embed_lookup: token id " + std::to_string(id) +
                             " outside table " + shape_of(table));
      for (std::size_t j = 0; j < t.cols(); ++j) n.value(p, j) = t(id, j);
    }
    return push(std::move(n));
  }

  /// Mean negative log-likelihood over rows, fused log-softmax. Scalar output.
  Var cross_entropy(Var logits, std::span<const int> targets) {
    if (targets.size() != logits.rows)
      throw DimensionError("tape cross_entropy: " + std::to_string(targets.size()) +
                           " targets for logits " + shape_of(logits));
    const Matrix& x = value(logits);
    Node n;
    n.kind = OpKind::kCrossEntropy;
    n.a = logits.id;
    n.tokens.assign(targets.begin(), targets.end());
    n.aux = Matrix(x.rows(), x.cols());  // cached softmax rows
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const int y = n.tokens[i];
      if (y < 0 || static_cast<std::size_t>(y) >= x.cols())
        throw DimensionError("tape cross_entropy: target " + std::to_string(y) +
                             " outside vocab " + std::to_string(x.cols()));
      double m = x(i, 0);
      for (std::size_t j = 1; j < x.cols(); ++j) m = std::max(m, x(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m);
      const double lse = m + std::log(s);
      total += lse - x(i, y);
      for (std::size_t j = 0; j < x.cols(); ++j) n.aux(i, j) = std::exp(x(i, j) - lse);
    }
    n.value = Matrix(1, 1);
    n.value(0, 0) = total / static_cast<double>(x.rows());
    return push(std::move(n));
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols)
      throw DimensionError("tape slice_cols: [" + std::to_string(begin) + ", " +
                           std::to_string(begin + count) + ") outside " + shape_of(a));
    const Matrix& x = value(a);
    Node n;
    n.kind = OpKind::kSliceCols;
    n.a = a.id;
    n.begin = begin;
    n.value = Matrix(x.rows(), count);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) n.value(i, j) = x(i, begin + j);
    return push(std::move(n));
  }

  Var concat_cols(Var a, Var b) {
    if (a.rows != b.rows)
      throw DimensionError("tape concat_cols: row counts disagree, " + shape_of(a) +
                           " vs " + shape_of(b));
    const Matrix& xa = value(a);
    const Matrix& xb = value(b);
    Node n;
    n.kind = OpKind::kConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.value = Matrix(a.rows, a.cols + b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      for (std::size_t j = 0; j < a.cols; ++j) n.value(i, j) = xa(i, j);
      for (std::size_t j = 0; j < b.cols; ++j) n.value(i, a.cols + j) = xb(i, j);
    }
    return push(std::move(n));
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoints of all leaves w.r.t. a scalar loss node. Leaves that the loss
  /// does not depend on get zero gradients of the right shape.
  GradientMap backward(Var loss) const {
    const Node& ln = nodes_[loss.id];
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw DimensionError("backward: loss must be 1x1, got " + shape_of(loss));

    std::vector<std::optional<Matrix>> adj(nodes_.size());
    adj[loss.id] = Matrix(1, 1);
    (*adj[loss.id])(0, 0) = 1.0;

    for (int id = loss.id; id >= 0; --id) {
      if (!adj[id]) continue;
      const Node& n = nodes_[id];
      const Matrix& g = *adj[id];
      switch (n.kind) {
        case OpKind::kLeaf:
          break;
        case OpKind::kMatmul: {
          const Matrix& a = nodes_[n.a].value;
          const Matrix& b = nodes_[n.b].value;
          if (!n.trans_a && !n.trans_b) {
            accumulate(adj, n.a, matmul_nt(g, b));
            accumulate(adj, n.b, matmul_tn(a, g));
          } else if (!n.trans_a && n.trans_b) {
            accumulate(adj, n.a, fora::matmul(g, b));
            accumulate(adj, n.b, matmul_tn(g, a));
          } else if (n.trans_a && !n.trans_b) {
            accumulate(adj, n.a, matmul_nt(b, g));
            accumulate(adj, n.b, fora::matmul(a, g));
          } else {
            accumulate(adj, n.a, transpose(fora::matmul(g, b)));
            accumulate(adj, n.b, transpose(fora::matmul(a, g)));
          }
          break;
        }
        case OpKind::kAdd:
          accumulate(adj, n.a, g);
          accumulate(adj, n.b, g);
          break;
        case OpKind::kScale:
          accumulate(adj, n.a, fora::scale(g, n.scalar));
          break;
        case OpKind::kRelu: {
          const Matrix& x = nodes_[n.a].value;
          Matrix dx(g.rows(), g.cols());
          for (std::size_t i = 0; i < g.size(); ++i)
            dx.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
          accumulate(adj, n.a, std::move(dx));
          break;
        }
        case OpKind::kSoftmaxRows: {
          const Matrix& y = n.value;
          Matrix dx(g.rows(), g.cols());
          for (std::size_t i = 0; i < y.rows(); ++i) {
            const std::size_t limit = n.causal ? i + 1 : y.cols();
            double dot = 0.0;
            for (std::size_t j = 0; j < limit; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < limit; ++j)
              dx(i, j) = y(i, j) * (g(i, j) - dot);
          }
          accumulate(adj, n.a, std::move(dx));
          break;
        }
        case OpKind::kLayernormRows: {
          const Matrix& y = n.value;
          const std::size_t c = y.cols();
          Matrix dx(y.rows(), c);
          for (std::size_t i = 0; i < y.rows(); ++i) {
            double gmean = 0.0, gymean = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              gmean += g(i, j);
              gymean += g(i, j) * y(i, j);
            }
            gmean /= static_cast<double>(c);
            gymean /= static_cast<double>(c);
            const double inv = n.aux_vec[i];
            for (std::size_t j = 0; j < c; ++j)
              dx(i, j) = inv * (g(i, j) - gmean - y(i, j) * gymean);
          }
          accumulate(adj, n.a, std::move(dx));
          break;
        }
        case OpKind::kEmbedLookup: {
          const Matrix& t = nodes_[n.a].value;
          Matrix dt(t.rows(), t.cols());
          for (std::size_t p = 0; p < n.tokens.size(); ++p)
            for (std::size_t j = 0; j < t.cols(); ++j)
              dt(n.tokens[p], j) += g(p, j);
          accumulate(adj, n.a, std::move(dt));
          break;
        }
        case OpKind::kCrossEntropy: {
          const Matrix& probs = n.aux;
          const double w = g(0, 0) / static_cast<double>(probs.rows());
          Matrix dx = fora::scale(probs, w);
          for (std::size_t i = 0; i < probs.rows(); ++i) dx(i, n.tokens[i]) -= w;
          accumulate(adj, n.a, std::move(dx));
          break;
        }
        case OpKind::kSliceCols: {
          const Matrix& x = nodes_[n.a].value;
          Matrix dx(x.rows(), x.cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) dx(i, n.begin + j) = g(i, j);
          accumulate(adj, n.a, std::move(dx));
          break;
        }
        case OpKind::kConcatCols: {
          const Matrix& xa = nodes_[n.a].value;
          const Matrix& xb = nodes_[n.b].value;
          Matrix da(xa.rows(), xa.cols()), db(xb.rows(), xb.cols());
          for (std::size_t i = 0; i < xa.rows(); ++i) {
            for (std::size_t j = 0; j < xa.cols(); ++j) da(i, j) = g(i, j);
            for (std::size_t j = 0; j < xb.cols(); ++j) db(i, j) = g(i, xa.cols() + j);
          }
          accumulate(adj, n.a, std::move(da));
          accumulate(adj, n.b, std::move(db));
          break;
        }
      }
    }

    GradientMap out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (nodes_[id].kind != OpKind::kLeaf) continue;
      if (adj[id])
        out.emplace(static_cast<int>(id), std::move(*adj[id]));
      else
        out.emplace(static_cast<int>(id),
                    Matrix(nodes_[id].value.rows(), nodes_[id].value.cols()));
    }
    return out;
  }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    int a = -1, b = -1;
    Matrix value;
    bool trans_a = false, trans_b = false;
    double scalar = 0.0;
    bool causal = false;
    std::size_t begin = 0;
    std::vector<int> tokens;
    Matrix aux;
    std::vector<double> aux_vec;
  };

  static std::string shape_of(Var v) {
    return std::to_string(v.rows) + "x" + std::to_string(v.cols);
  }

  static Matrix product(const Matrix& a, bool ta, const Matrix& b, bool tb) {
    if (!ta && !tb) return fora::matmul(a, b);
    if (!ta && tb) return matmul_nt(a, b);
    if (ta && !tb) return matmul_tn(a, b);
    return transpose(fora::matmul(b, a));  // a^T b^T == (b a)^T
  }

  static void accumulate(std::vector<std::optional<Matrix>>& adj, int id, Matrix g) {
    if (!adj[id])
      adj[id] = std::move(g);
    else
      axpy(*adj[id], 1.0, g);
  }

  Var push(Node n) {
    const std::size_t r = n.value.rows(), c = n.value.cols();
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1), r, c};
  }

  std::vector<Node> nodes_;
};

}  // namespace fora
