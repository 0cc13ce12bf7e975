// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cvqa/nn/tensor.hpp"

namespace cvqa::nn {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, int id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  int id() const { return id_; }
  Graph<T>* graph() const { return graph_; }

  const Matrix<T>& value() const;
  const Matrix<T>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }

 private:
  Graph<T>* graph_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards is a valid topological order for backpropagation.
///
/// Nodes live in a deque: references returned by value() stay valid while
/// further nodes are pushed.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  explicit Graph(ParameterStore<T>* params = nullptr, bool grad_enabled = true)
      : params_(params), grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives gradient.
  Var<T> constant(Matrix<T> value);
  /// Leaf that receives gradient (used for inputs under gradient checks).
  Var<T> input(Matrix<T> value);
  /// Leaf bound to a stored parameter; its gradient is added to the store's
  /// grad buffer by backward(). Bound once per graph.
  Var<T> param(int id);
  Var<T> param(const std::string& name);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
  void backward(Var<T> root);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  ParameterStore<T>* params() const { return params_; }

  const Matrix<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix<T>& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Appends an op node. `backward` is dropped when no input needs gradient.
  Var<T> push(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> push(Matrix<T> value, std::span<const Var<T>> inputs, Backward backward);

  /// grad(id) += delta, allocating on first use. No-op for nodes that do not
  /// require gradient.
  template <typename Expr>
  void accumulate(int id, const Expr& delta) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = delta;
      n.has_grad = true;
    } else {
      n.grad += delta;
    }
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward backward;
    int param_id = -1;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::deque<Node> nodes_;
  ParameterStore<T>* params_;
  std::vector<int> param_nodes_;
  bool grad_enabled_;
  Matrix<T> empty_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return graph_->value(id_);
}
template <typename T>
const Matrix<T>& Var<T>::grad() const {
  return graph_->grad(id_);
}

/// Attention probabilities of one multi-head call: one (queries x keys)
/// row-stochastic matrix per head.
template <typename T>
using AttentionMaps = std::vector<Matrix<T>>;

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes are checked; mismatches throw ShapeError.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
/// x * w + bias (bias is a 1 x out row broadcast over rows; may be invalid).
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> add_scalar(Var<T> a, T offset);
/// a (n x d) + row (1 x d) broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
/// a * s for a 1x1 node s.
template <typename T> Var<T> scale_by(Var<T> a, Var<T> s);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// tanh-approximated GELU.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
/// log(x + eps), elementwise.
template <typename T> Var<T> log_eps(Var<T> x, T eps);
template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> log_softmax_rows(Var<T> x);
/// Mean over rows: n x d -> 1 x d.
template <typename T> Var<T> mean_rows(Var<T> x);
/// 1 x d -> n x d.
template <typename T> Var<T> broadcast_rows(Var<T> x, Eigen::Index n);
/// Mean of consecutive groups of `stride` rows: n x d -> (n/stride) x d.
template <typename T> Var<T> pool_rows(Var<T> x, Eigen::Index stride);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const int> rows);
template <typename T> Var<T> slice_rows(Var<T> x, Eigen::Index begin, Eigen::Index count);
/// Sum of all entries -> 1x1.
template <typename T> Var<T> sum_all(Var<T> x);
/// Single entry -> 1x1.
template <typename T> Var<T> element(Var<T> x, Eigen::Index r, Eigen::Index c);
/// Diagonal of a square matrix -> n x 1.
template <typename T> Var<T> diagonal(Var<T> x);
/// Same value, gradient blocked.
template <typename T> Var<T> detach(Var<T> x);

/// Row offsets splitting a stacked batch into independent sequences:
/// sequence s occupies rows [offsets[s], offsets[s+1]).
using Offsets = std::vector<int>;

/// Offsets for `count` sequences of equal length.
Offsets uniform_offsets(int count, int length);

/// Mean of each sequence: rows -> (#sequences) x d.
template <typename T> Var<T> segment_mean(Var<T> x, const Offsets& offsets);
/// Inverse shape of segment_mean: row s is repeated for every row of sequence s.
template <typename T> Var<T> segment_broadcast(Var<T> x, const Offsets& offsets);

/// Scaled dot-product attention over pre-projected q (n x d), k and v
/// (m x d), split into `heads` column blocks. Scale is 1/sqrt(d/heads). With
/// `causal`, query i sees keys j <= i + (m - n).
///
/// When offsets are given, q and k/v are stacked batches and sequence s of q
/// only attends to sequence s of k/v. Per-head probabilities are copied to
/// `maps` when non-null, sequence-major: maps[s * heads + h].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, bool causal = false,
                 AttentionMaps<T>* maps = nullptr, const Offsets* q_offsets = nullptr,
                 const Offsets* kv_offsets = nullptr);

}  // namespace cvqa::nn
