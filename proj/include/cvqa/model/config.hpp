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

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace cvqa::model {

struct ModelConfig {
  int grid = 32;
  int patch = 4;
  int dim = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int ffn_hidden = 128;
  int head_hidden = 128;
  int top_k = 8;
  int global_stride = 4;
  /// Drop repeated local tokens across heads and refill from the best
  /// remaining ones, keeping L = heads * top_k.
  bool dedup = false;
  int max_text_len = 96;
  /// Decoder length budget including the end token.
  int max_answer_len = 6;
  /// How the prompt enters the decoder prefix: "tokens" (every prompt token),
  /// "pooled" (one mean-pooled row) or "pairs" (one mean-pooled row per
  /// prompt segment: instructions, each QA pair, the question).
  std::string prompt_prefix = "pooled";
  /// Detach the original-branch prediction in the consistency loss.
  bool detach_original = true;
  /// Stop gradients between the mutual-information critic and the rest of
  /// the model (critic sees detached features, gate sees a detached I).
  bool detach_critic = true;
  /// Condition the original (raw-feature) branch on the prompt as well. Off:
  /// the consistency target is the same with and without PM.
  bool original_sees_prompt = false;
  int vocab_size = 0;  // 0: size of the built-in vocabulary

  int tokens() const { return (grid / patch) * (grid / patch); }
  int local_tokens() const { return heads * top_k; }
  int resolved_vocab() const;
  void validate() const;  // ConfigError
};

nlohmann::json to_json(const ModelConfig& c);
/// Unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Flags {
  bool use_cif = true;
  bool use_fda = true;
  bool use_pm = false;
  /// Throws FlagError when use_fda is set without use_cif.
  void validate() const;
  std::string arm_name() const;
};

/// Closed answers are classified over this fixed set.
inline constexpr std::array<const char*, 4> kClosedAnswers = {"yes", "no", "left", "right"};
inline constexpr int kNumClosed = 4;

/// Index into kClosedAnswers of a single answer token, or -1.
int closed_index(const std::vector<int>& answer);
int closed_token(int index);

}  // namespace cvqa::model
