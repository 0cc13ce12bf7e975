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

#include "cvqa/data/templates.hpp"
#include "cvqa/model/encoders.hpp"

namespace cvqa::model {

inline constexpr double kLogFloor = 1e-9;

/// Mean over rows of -log probs(row, target). Throws RangeError for targets
/// outside the columns and ShapeError when counts differ.
double loss_closed(const Matrix<double>& probs, std::span<const int> targets);

/// KL(p_causal || p_orig) with the floor added inside both logarithms.
double loss_causal(std::span<const double> p_causal, std::span<const double> p_orig, double eps = kLogFloor);

struct LossComponents {
  std::optional<double> closed;
  std::optional<double> open;
  double causal = 0.0;
};

/// Closed: L_c + L_cau; open (or unlabelled): L_o + L_cau. Throws QTypeError
/// when the component for the question form is missing.
double total_loss(std::optional<data::QType> qtype, const LossComponents& c);

/// Sum over rows of -log_softmax(logits)(row, target).
template <typename T>
Var<T> nll_rows(Var<T> logits, std::span<const int> targets);

/// Sum over rows of KL(softmax(causal) || softmax(original)), floored logs.
/// With `detach_original` no gradient reaches the original branch.
template <typename T>
Var<T> kl_rows(Var<T> causal_logits, Var<T> original_logits, bool detach_original = true, T eps = T(kLogFloor));

/// Small causal transformer over [prefix rows; BOS a_1 .. a_{n-1}] producing
/// next-token logits at every answer position.
template <typename T>
struct OpenDecoder {
  int embedding = -1;
  int positions = -1;
  /// Role embeddings added to prefix rows: image, question, prompt.
  int segments = -1;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
  nn::Linear<T> out;
  int vocab = 0, max_len = 0;

  static OpenDecoder create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  /// prefix: stacked rows split by prefix_offsets; inputs[s] starts with BOS
  /// and is at most max_len long. Returns logits stacked by input_offsets.
  Var<T> operator()(Graph<T>& g, Var<T> prefix, const Offsets& prefix_offsets,
                    std::span<const std::vector<int>> inputs, Offsets& input_offsets) const;
};

/// Teacher-forcing inputs and targets for an answer: [BOS a_1..a_n] and
/// [a_1..a_n EOS]. Throws LengthError when n + 1 exceeds max_len.
std::pair<std::vector<int>, std::vector<int>> teacher_forcing(const std::vector<int>& answer, int max_len);

}  // namespace cvqa::model
