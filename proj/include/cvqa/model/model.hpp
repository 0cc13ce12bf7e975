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
#include <span>
#include <vector>

#include "cvqa/data/templates.hpp"
#include "cvqa/model/cif.hpp"
#include "cvqa/model/losses.hpp"

namespace cvqa::model {

/// One model input. Pointers must outlive the forward call.
struct Example {
  const data::Image* image = nullptr;
  const std::vector<int>* question = nullptr;
  /// Assembled prompt ids; read only when use_pm is set.
  const std::vector<int>* prompt = nullptr;
  data::QType qtype = data::QType::kOpen;
  const std::vector<int>* answer = nullptr;
};

/// How often each CIF stage ran; used to confirm which paths an arm touches.
struct CallCounters {
  long fuse = 0;
  long mediator_visual = 0;
  long mediator_textual = 0;
  long mi_gate = 0;
  long frontdoor = 0;
  long total() const { return fuse + mediator_visual + mediator_textual + mi_gate + frontdoor; }
};

/// Per-sample attention exports, each a distribution over image tokens.
struct Diagnostics {
  std::vector<std::vector<int>> selected;
  /// Final encoder block: attention received per token, averaged over
  /// heads and queries.
  std::vector<std::vector<double>> encoder_mass;
  /// Visual front-door attention over the mediator tokens, credited to the
  /// image token each mediator row was selected from. Empty without FDA.
  std::vector<std::vector<double>> cif_mass;
  double lambda = 0.0;
  double mi = 0.0;
  bool gate_from_last = false;
};

template <typename T>
struct ForwardResult {
  /// Pooled streams feeding the head: f_i', f_q' (full), m_i, m_q (bypass)
  /// or f_i, f_q (baseline). B x d each.
  Var<T> vis, txt;
  /// Raw pooled encoder features.
  Var<T> vis_orig, txt_orig;
  /// Pooled prompt (B x d) and prompt tokens; invalid without PM.
  Var<T> prompt_pool, prompt_tokens;
  Offsets prompt_offsets;
  /// Per-segment prompt pools and, per sample, the range of its segment rows.
  Var<T> prompt_segments;
  Offsets prompt_segment_offsets;
  /// Closed-answer logits (B x 4) from the head's streams, and from the raw
  /// streams with the same head (only with CIF).
  Var<T> logits, orig_logits;
  Var<T> mi, lambda;
  Diagnostics diag;
};

struct LossBreakdown {
  double closed = 0.0;  // mean over closed samples
  double open = 0.0;    // mean over open samples
  double causal = 0.0;  // mean over all samples
  double critic = 0.0;  // -I, 0 without CIF
  double total = 0.0;
  double lambda = 0.0;
  int n_closed = 0, n_open = 0;
};

struct Prediction {
  data::QType qtype = data::QType::kOpen;
  /// Closed: probabilities over kClosedAnswers and the argmax token.
  std::vector<double> probs;
  /// Predicted answer tokens (closed: one token; open: greedy decode).
  std::vector<int> tokens;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  CallCounters& counters() { return counters_; }
  std::optional<double> last_mi() const { return last_mi_; }
  void set_last_mi(std::optional<double> v) { last_mi_ = v; }
  /// Marks the image and text encoders (not) trainable.
  void freeze_encoders(bool frozen);

  ForwardResult<T> forward(Graph<T>& g, std::span<const Example> batch, const Flags& flags);
  /// Mean per-sample objective (task loss + consistency term) plus the
  /// critic's -I term.
  Var<T> loss(Graph<T>& g, std::span<const Example> batch, const Flags& flags, LossBreakdown* breakdown = nullptr);
  /// Teacher-forced open-answer NLL summed over positions and averaged over
  /// the open samples of the batch; also returns the causal per-step KL sum.
  Var<T> open_loss(Graph<T>& g, const ForwardResult<T>& f, std::span<const Example> batch, const Flags& flags,
                   const std::vector<std::size_t>& which, Var<T>* causal_kl);

  std::vector<Prediction> predict(std::span<const Example> batch, const Flags& flags, Diagnostics* diag = nullptr);
  /// Greedy decode up to max_len tokens, stopping at the end token.
  std::vector<std::vector<int>> decode_open(Graph<T>& g, const ForwardResult<T>& f, const Flags& flags,
                                            const std::vector<std::size_t>& which, int max_len);

  // Components, exposed for tests.
  ImageEncoder<T> image_encoder;
  TextEncoder<T> text_encoder;
  FmmGlobal<T> fmm_global;
  Fusion<T> fusion;
  MediatorVisual<T> mediator_visual;
  MediatorTextual<T> mediator_textual;
  MiGate<T> gate;
  FrontDoor<T> frontdoor_visual, frontdoor_textual;
  AnswerHead<T> head;
  OpenDecoder<T> decoder;

  /// Decoder prefix rows [vis; txt; prompt rows] for the chosen samples,
  /// each tagged with its role embedding.
  Var<T> decoder_prefix(Var<T> vis, Var<T> txt, const ForwardResult<T>& f,
                        const std::vector<std::size_t>& which, const Flags& flags, Offsets& offsets) const;

 private:

  ModelConfig config_;
  ParameterStore<T> params_;
  CallCounters counters_;
  std::optional<double> last_mi_;
};

}  // namespace cvqa::model
