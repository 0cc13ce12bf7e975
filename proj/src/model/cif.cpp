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

#include "cvqa/model/cif.hpp"

#include <cmath>

#include "cvqa/errors.hpp"

namespace cvqa::model {

namespace {

template <typename T>
typename nn::MultiHeadAttention<T>::Options segments(const Offsets& q, const Offsets& kv,
                                                     AttentionMaps<T>* maps = nullptr) {
  typename nn::MultiHeadAttention<T>::Options o;
  o.q_offsets = &q;
  o.kv_offsets = &kv;
  o.maps = maps;
  return o;
}

template <typename T>
void same_width(Var<T> a, Var<T> b, const char* what) {
  if (a.cols() != b.cols()) throw ShapeError(std::string(what) + ": feature widths differ");
}

}  // namespace

template <typename T>
Fusion<T> Fusion<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  Fusion f;
  f.attn = nn::MultiHeadAttention<T>::create(store, prefix + ".attn", cfg.dim, cfg.heads, rng);
  f.mlp = nn::FeedForward<T>::create(store, prefix + ".mlp", cfg.dim, cfg.ffn_hidden, rng);
  return f;
}

template <typename T>
Var<T> Fusion<T>::operator()(Graph<T>& g, Var<T> f_il, const Offsets& il_offsets, Var<T> f_q,
                             const Offsets& q_offsets) const {
  same_width(f_il, f_q, "fuse");
  return mlp(g, attn(g, f_il, f_q, f_q, segments<T>(il_offsets, q_offsets)));
}

template <typename T>
Mixer<T> Mixer<T>::create(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, int out, Rng& rng) {
  Mixer m;
  m.fc1 = nn::Linear<T>::create(store, prefix + ".fc1", in, hidden, rng);
  m.fc2 = nn::Linear<T>::create(store, prefix + ".fc2", hidden, out, rng);
  return m;
}

template <typename T>
Var<T> Mixer<T>::operator()(Graph<T>& g, Var<T> a, Var<T> b) const {
  if (a.rows() != b.rows()) throw ShapeError("mixer: branch row counts differ");
  const Var<T> parts[] = {a, b};
  return fc2(g, nn::gelu(fc1(g, nn::concat_cols<T>(parts))));
}

template <typename T>
MediatorVisual<T> MediatorVisual<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                            const ModelConfig& cfg, Rng& rng) {
  MediatorVisual m;
  m.global_attn = nn::MultiHeadAttention<T>::create(store, prefix + ".global", cfg.dim, cfg.heads, rng);
  m.fused_attn = nn::MultiHeadAttention<T>::create(store, prefix + ".fused", cfg.dim, cfg.heads, rng);
  m.mix = Mixer<T>::create(store, prefix + ".mix", 2 * cfg.dim, cfg.ffn_hidden, cfg.dim, rng);
  return m;
}

template <typename T>
Var<T> MediatorVisual<T>::operator()(Graph<T>& g, Var<T> f_il, const Offsets& il_offsets, Var<T> f_ig,
                                     const Offsets& ig_offsets, Var<T> f_iq, Var<T> lambda) const {
  same_width(f_il, f_ig, "mediator_visual");
  if (f_iq.rows() != f_il.rows()) throw ShapeError("mediator_visual: f_iq must have one row per local token");
  auto glob = global_attn(g, f_il, f_ig, f_ig, segments<T>(il_offsets, ig_offsets));
  auto fused = nn::scale_by(fused_attn(g, f_il, f_iq, f_iq, segments<T>(il_offsets, il_offsets)), lambda);
  return mix(g, glob, fused);
}

template <typename T>
MediatorTextual<T> MediatorTextual<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                              const ModelConfig& cfg, Rng& rng) {
  MediatorTextual m;
  m.self_attn = nn::MultiHeadAttention<T>::create(store, prefix + ".self", cfg.dim, cfg.heads, rng);
  m.cross_attn = nn::MultiHeadAttention<T>::create(store, prefix + ".cross", cfg.dim, cfg.heads, rng);
  m.mix = Mixer<T>::create(store, prefix + ".mix", 2 * cfg.dim, cfg.ffn_hidden, cfg.dim, rng);
  return m;
}

template <typename T>
Var<T> MediatorTextual<T>::operator()(Graph<T>& g, Var<T> f_q, const Offsets& q_offsets, Var<T> f_iq,
                                      const Offsets& iq_offsets, Var<T> lambda) const {
  same_width(f_q, f_iq, "mediator_textual");
  auto self = self_attn(g, f_q, f_q, f_q, segments<T>(q_offsets, q_offsets));
  auto cross = cross_attn(g, f_iq, f_q, f_q, segments<T>(iq_offsets, q_offsets));
  auto aligned = nn::segment_broadcast(nn::segment_mean(cross, iq_offsets), q_offsets);
  return mix(g, self, nn::scale_by(aligned, lambda));
}

template <typename T>
MiGate<T> MiGate<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  MiGate m;
  m.critic = store.add(prefix + ".critic", nn::xavier_uniform(rng, cfg.dim, cfg.dim).template cast<T>());
  m.a = store.add(prefix + ".a", Matrix<T>::Constant(1, 1, T(1)), false);
  m.b = store.add(prefix + ".b", Matrix<T>::Zero(1, 1), false);
  m.detach = cfg.detach_critic;
  return m;
}

template <typename T>
Var<T> MiGate<T>::estimate(Graph<T>& g, Var<T> pooled_i, Var<T> pooled_q) const {
  const auto n = pooled_i.rows();
  if (n < 2) throw BatchTooSmall("mutual-information estimate needs at least 2 pairs, got " + std::to_string(n));
  if (pooled_q.rows() != n) throw ShapeError("mi_gate: image and question batch sizes differ");
  if (detach) {
    pooled_i = nn::detach(pooled_i);
    pooled_q = nn::detach(pooled_q);
  }
  auto scores = nn::matmul_nt(nn::matmul(pooled_i, g.param(critic)), pooled_q);
  auto matched = nn::sum_all(nn::diagonal(nn::log_softmax_rows(scores)));
  return nn::add_scalar(nn::scale(matched, T(1) / static_cast<T>(n)), static_cast<T>(std::log(static_cast<double>(n))));
}

template <typename T>
GateOutput<T> MiGate<T>::operator()(Graph<T>& g, Var<T> pooled_i, Var<T> pooled_q, std::optional<double> last) const {
  GateOutput<T> out;
  if (pooled_i.rows() >= 2) {
    out.mi = estimate(g, pooled_i, pooled_q);
  } else {
    if (!last) throw BatchTooSmall("single-pair gate call with no stored batch statistic");
    out.mi = g.constant(Matrix<T>::Constant(1, 1, static_cast<T>(*last)));
    out.from_last = true;
  }
  auto logit = nn::add(nn::mul(g.param(a), detach ? nn::detach(out.mi) : out.mi), g.param(b));
  out.lambda = nn::sigmoid(logit);
  return out;
}

template <typename T>
FrontDoor<T> FrontDoor<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                  Rng& rng) {
  FrontDoor f;
  f.attn = nn::MultiHeadAttention<T>::create(store, prefix + ".attn", cfg.dim, cfg.heads, rng, true);
  f.norm = nn::LayerNorm<T>::create(store, prefix + ".ln", cfg.dim);
  return f;
}

template <typename T>
Var<T> FrontDoor<T>::operator()(Graph<T>& g, Var<T> f, const Offsets& f_offsets, Var<T> m, const Offsets& m_offsets,
                                AttentionMaps<T>* maps) const {
  same_width(f, m, "front-door");
  return norm(g, nn::add(f, attn(g, f, m, m, segments<T>(f_offsets, m_offsets, maps))));
}

template <typename T>
AnswerHead<T> AnswerHead<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                    Rng& rng) {
  AnswerHead h;
  h.dim = cfg.dim;
  h.fc1 = nn::Linear<T>::create(store, prefix + ".fc1", 3 * cfg.dim, cfg.head_hidden, rng);
  h.fc2 = nn::Linear<T>::create(store, prefix + ".fc2", cfg.head_hidden, kNumClosed, rng);
  return h;
}

template <typename T>
Var<T> AnswerHead<T>::operator()(Graph<T>& g, Var<T> vis, Var<T> txt, Var<T> prompt) const {
  if (vis.rows() != txt.rows() || vis.cols() != dim || txt.cols() != dim) throw ShapeError("answer head: bad stream shapes");
  if (!prompt.valid()) prompt = g.constant(Matrix<T>::Zero(vis.rows(), dim));
  if (prompt.rows() != vis.rows() || prompt.cols() != dim) throw ShapeError("answer head: bad prompt shape");
  const Var<T> parts[] = {vis, txt, prompt};
  return fc2(g, nn::gelu(fc1(g, nn::concat_cols<T>(parts))));
}

#define CVQA_INSTANTIATE(T)         \
  template struct Fusion<T>;        \
  template struct Mixer<T>;         \
  template struct MediatorVisual<T>; \
  template struct MediatorTextual<T>; \
  template struct MiGate<T>;        \
  template struct FrontDoor<T>;     \
  template struct AnswerHead<T>;

CVQA_INSTANTIATE(float)
CVQA_INSTANTIATE(double)

}  // namespace cvqa::model
