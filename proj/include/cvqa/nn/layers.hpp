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

#include <string>

#include "cvqa/nn/graph.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::nn {

/// Xavier-uniform (fan_in x fan_out) matrix, drawn in double precision so a
/// float and a double store built from the same seed agree up to rounding.
Matrix<double> xavier_uniform(Rng& rng, int fan_in, int fan_out);

/// Layers only hold parameter ids; the values live in a ParameterStore and are
/// bound into a Graph on use. Parameter names are "<prefix>.<field>".
template <typename T>
struct Linear {
  int weight = -1;
  int bias = -1;

  static Linear create(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                       bool with_bias = true);
  /// All-zero weight and bias.
  static Linear zeros(ParameterStore<T>& store, const std::string& prefix, int in, int out, bool with_bias = true);
  Var<T> operator()(Graph<T>& g, Var<T> x) const;
};

template <typename T>
struct LayerNorm {
  int gamma = -1;
  int beta = -1;

  static LayerNorm create(ParameterStore<T>& store, const std::string& prefix, int dim);
  Var<T> operator()(Graph<T>& g, Var<T> x) const;
};

/// Multi-head attention with separate query/key/value/output projections.
template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  /// `zero_output` starts the output projection at zero, so the layer
  /// initially contributes nothing to a residual stream.
  static MultiHeadAttention create(ParameterStore<T>& store, const std::string& prefix, int dim, int heads,
                                   Rng& rng, bool zero_output = false);

  struct Options {
    bool causal = false;
    AttentionMaps<T>* maps = nullptr;
    const Offsets* q_offsets = nullptr;
    const Offsets* kv_offsets = nullptr;
  };
  Var<T> operator()(Graph<T>& g, Var<T> query, Var<T> key, Var<T> value, const Options& opt) const;
  Var<T> operator()(Graph<T>& g, Var<T> query, Var<T> key, Var<T> value) const {
    return (*this)(g, query, key, value, Options{});
  }
};

/// x + W2 gelu(W1 LN(x) + b1) + b2.
template <typename T>
struct FeedForward {
  LayerNorm<T> norm;
  Linear<T> fc1, fc2;

  static FeedForward create(ParameterStore<T>& store, const std::string& prefix, int dim, int hidden, Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> x) const;
};

/// Pre-norm block: h = x + MHA(LN(x)); out = FeedForward(h).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  static TransformerBlock create(ParameterStore<T>& store, const std::string& prefix, int dim, int heads,
                                 int hidden, Rng& rng);
  /// Self-attention; offsets (if any) apply to both sides.
  Var<T> operator()(Graph<T>& g, Var<T> x, const Offsets* offsets = nullptr, bool causal = false,
                    AttentionMaps<T>* maps = nullptr) const;
};

/// Functional multi-head attention over one sequence pair, for direct use and
/// tests: returns the output and the per-head probability maps.
template <typename T>
struct MhaResult {
  Var<T> output;
  AttentionMaps<T> attn;
};
template <typename T>
MhaResult<T> mha(Graph<T>& g, const MultiHeadAttention<T>& layer, Var<T> query, Var<T> key, Var<T> value);

/// Residual feed-forward block applied to x.
template <typename T>
Var<T> ffn_block(Graph<T>& g, const FeedForward<T>& layer, Var<T> x);

}  // namespace cvqa::nn
