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

#include "cvqa/nn/layers.hpp"

#include <cmath>

#include "cvqa/errors.hpp"

namespace cvqa::nn {

Matrix<double> xavier_uniform(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<double> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return w;
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                            bool with_bias) {
  Linear l;
  l.weight = store.add(prefix + ".weight", xavier_uniform(rng, in, out).template cast<T>());
  if (with_bias) l.bias = store.add(prefix + ".bias", Matrix<T>::Zero(1, out), false);
  return l;
}

template <typename T>
Linear<T> Linear<T>::zeros(ParameterStore<T>& store, const std::string& prefix, int in, int out, bool with_bias) {
  Linear l;
  l.weight = store.add(prefix + ".weight", Matrix<T>::Zero(in, out));
  if (with_bias) l.bias = store.add(prefix + ".bias", Matrix<T>::Zero(1, out), false);
  return l;
}

template <typename T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x) const {
  return linear(x, g.param(weight), bias >= 0 ? g.param(bias) : Var<T>());
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& prefix, int dim) {
  LayerNorm n;
  n.gamma = store.add(prefix + ".gamma", Matrix<T>::Ones(1, dim), false);
  n.beta = store.add(prefix + ".beta", Matrix<T>::Zero(1, dim), false);
  return n;
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x) const {
  return layer_norm(x, g.param(gamma), g.param(beta));
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::create(ParameterStore<T>& store, const std::string& prefix, int dim,
                                                    int heads, Rng& rng, bool zero_output) {
  if (heads <= 0 || dim % heads != 0) {
    throw ShapeError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads));
  }
  MultiHeadAttention a;
  a.heads = heads;
  a.wq = Linear<T>::create(store, prefix + ".q", dim, dim, rng);
  a.wk = Linear<T>::create(store, prefix + ".k", dim, dim, rng);
  a.wv = Linear<T>::create(store, prefix + ".v", dim, dim, rng);
  a.wo = zero_output ? Linear<T>::zeros(store, prefix + ".o", dim, dim) : Linear<T>::create(store, prefix + ".o", dim, dim, rng);
  return a;
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Graph<T>& g, Var<T> query, Var<T> key, Var<T> value,
                                         const Options& opt) const {
  if (key.rows() != value.rows()) throw ShapeError("attention: key and value token counts differ");
  auto q = wq(g, query);
  auto k = wk(g, key);
  auto v = wv(g, value);
  return wo(g, attention(q, k, v, heads, opt.causal, opt.maps, opt.q_offsets, opt.kv_offsets));
}

template <typename T>
FeedForward<T> FeedForward<T>::create(ParameterStore<T>& store, const std::string& prefix, int dim, int hidden,
                                      Rng& rng) {
  FeedForward f;
  f.norm = LayerNorm<T>::create(store, prefix + ".ln", dim);
  f.fc1 = Linear<T>::create(store, prefix + ".fc1", dim, hidden, rng);
  f.fc2 = Linear<T>::create(store, prefix + ".fc2", hidden, dim, rng);
  return f;
}

template <typename T>
Var<T> FeedForward<T>::operator()(Graph<T>& g, Var<T> x) const {
  return add(x, fc2(g, gelu(fc1(g, norm(g, x)))));
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::create(ParameterStore<T>& store, const std::string& prefix, int dim,
                                                int heads, int hidden, Rng& rng) {
  TransformerBlock b;
  b.norm = LayerNorm<T>::create(store, prefix + ".ln", dim);
  b.attn = MultiHeadAttention<T>::create(store, prefix + ".attn", dim, heads, rng);
  b.ffn = FeedForward<T>::create(store, prefix + ".ffn", dim, hidden, rng);
  return b;
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(Graph<T>& g, Var<T> x, const Offsets* offsets, bool causal,
                                       AttentionMaps<T>* maps) const {
  auto h = norm(g, x);
  typename MultiHeadAttention<T>::Options opt;
  opt.causal = causal;
  opt.maps = maps;
  opt.q_offsets = offsets;
  opt.kv_offsets = offsets;
  return ffn(g, add(x, attn(g, h, h, h, opt)));
}

template <typename T>
MhaResult<T> mha(Graph<T>& g, const MultiHeadAttention<T>& layer, Var<T> query, Var<T> key, Var<T> value) {
  MhaResult<T> r;
  typename MultiHeadAttention<T>::Options opt;
  opt.maps = &r.attn;
  r.output = layer(g, query, key, value, opt);
  return r;
}

template <typename T>
Var<T> ffn_block(Graph<T>& g, const FeedForward<T>& layer, Var<T> x) {
  return layer(g, x);
}

#define CVQA_INSTANTIATE(T)                                                                                   \
  template struct Linear<T>;                                                                                  \
  template struct LayerNorm<T>;                                                                               \
  template struct MultiHeadAttention<T>;                                                                      \
  template struct FeedForward<T>;                                                                             \
  template struct TransformerBlock<T>;                                                                        \
  template MhaResult<T> mha(Graph<T>&, const MultiHeadAttention<T>&, Var<T>, Var<T>, Var<T>);                 \
  template Var<T> ffn_block(Graph<T>&, const FeedForward<T>&, Var<T>);

CVQA_INSTANTIATE(float)
CVQA_INSTANTIATE(double)

}  // namespace cvqa::nn
