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

#include <optional>

#include "cvqa/model/encoders.hpp"

namespace cvqa::model {

/// Cross-modal interaction: f_iq = MLP(MHA(f_il, f_q, f_q)), one row per
/// local image token.
template <typename T>
struct Fusion {
  nn::MultiHeadAttention<T> attn;
  nn::FeedForward<T> mlp;

  static Fusion create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> f_il, const Offsets& il_offsets, Var<T> f_q, const Offsets& q_offsets) const;
};

/// Two-layer mixing MLP over feature-wise concatenated branches.
template <typename T>
struct Mixer {
  nn::Linear<T> fc1, fc2;
  static Mixer create(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, int out, Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> a, Var<T> b) const;
};

/// m_i = MLP([MHA(f_il, f_ig, f_ig), lambda * MHA(f_il, f_iq, f_iq)]).
template <typename T>
struct MediatorVisual {
  nn::MultiHeadAttention<T> global_attn, fused_attn;
  Mixer<T> mix;

  static MediatorVisual create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> f_il, const Offsets& il_offsets, Var<T> f_ig, const Offsets& ig_offsets,
                    Var<T> f_iq, Var<T> lambda) const;
};

/// m_q = MLP([MHA(f_q, f_q, f_q), lambda * broadcast(mean(MHA(f_iq, f_q, f_q)))]),
/// one row per question token.
template <typename T>
struct MediatorTextual {
  nn::MultiHeadAttention<T> self_attn, cross_attn;
  Mixer<T> mix;

  static MediatorTextual create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> f_q, const Offsets& q_offsets, Var<T> f_iq, const Offsets& iq_offsets,
                    Var<T> lambda) const;
};

template <typename T>
struct GateOutput {
  Var<T> mi;      // 1x1 InfoNCE estimate
  Var<T> lambda;  // 1x1
  /// True when the batch was too small and the stored statistic was used.
  bool from_last = false;
};

/// lambda = sigmoid(a * I + b), with I an InfoNCE lower bound on the mutual
/// information between pooled image and question features, scored by a
/// bilinear critic. With `detach` (default) the critic sees detached
/// features and the gate a detached I, so the critic is trained only through
/// the -I objective.
template <typename T>
struct MiGate {
  int critic = -1;
  int a = -1, b = -1;
  bool detach = true;

  static MiGate create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  /// pooled_i, pooled_q: B x d. With B < 2 the estimate falls back to
  /// `last` (BatchTooSmall when absent).
  GateOutput<T> operator()(Graph<T>& g, Var<T> pooled_i, Var<T> pooled_q, std::optional<double> last) const;
  /// InfoNCE estimate alone; B >= 2.
  Var<T> estimate(Graph<T>& g, Var<T> pooled_i, Var<T> pooled_q) const;
};

/// f' = LN(f + MHA(f, m, m)); the output projection starts at zero.
template <typename T>
struct FrontDoor {
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> norm;

  static FrontDoor create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  Var<T> operator()(Graph<T>& g, Var<T> f, const Offsets& f_offsets, Var<T> m, const Offsets& m_offsets,
                    AttentionMaps<T>* maps = nullptr) const;
};

/// Closed-answer logits from the pooled visual and textual streams plus an
/// optional pooled prompt (zeros when absent).
template <typename T>
struct AnswerHead {
  nn::Linear<T> fc1, fc2;
  int dim = 0;

  static AnswerHead create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  /// All inputs B x d; prompt may be invalid.
  Var<T> operator()(Graph<T>& g, Var<T> vis, Var<T> txt, Var<T> prompt) const;
};

}  // namespace cvqa::model
