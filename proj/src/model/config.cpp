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

#include "cvqa/model/config.hpp"

#include <set>

#include "cvqa/data/vocab.hpp"
#include "cvqa/errors.hpp"

namespace cvqa::model {

int ModelConfig::resolved_vocab() const { return vocab_size > 0 ? vocab_size : data::Vocab::builtin().size(); }

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(patch > 0 && grid > 0 && grid % patch == 0, "grid must be a positive multiple of patch");
  need(dim > 0 && heads > 0 && dim % heads == 0, "dim must be divisible by heads");
  need(encoder_blocks >= 1 && decoder_blocks >= 1, "at least one encoder and decoder block");
  need(ffn_hidden > 0 && head_hidden > 0, "hidden widths must be positive");
  need(global_stride > 0 && tokens() % global_stride == 0, "token count must be a multiple of global_stride");
  need(top_k >= 1 && top_k <= tokens(), "top_k must lie in [1, tokens]");
  need(!dedup || local_tokens() <= tokens(), "dedup needs heads * top_k <= tokens");
  need(max_text_len >= 1, "max_text_len must be positive");
  need(max_answer_len >= 2 && max_answer_len <= 6, "max_answer_len must lie in [2, 6]");
  need(prompt_prefix == "tokens" || prompt_prefix == "pooled" || prompt_prefix == "pairs",
       "prompt_prefix must be one of tokens, pooled, pairs");
  need(vocab_size == 0 || vocab_size >= data::Vocab::builtin().size(), "vocab_size smaller than the vocabulary");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"grid", c.grid},
          {"patch", c.patch},
          {"dim", c.dim},
          {"heads", c.heads},
          {"encoder_blocks", c.encoder_blocks},
          {"decoder_blocks", c.decoder_blocks},
          {"ffn_hidden", c.ffn_hidden},
          {"head_hidden", c.head_hidden},
          {"top_k", c.top_k},
          {"global_stride", c.global_stride},
          {"dedup", c.dedup},
          {"max_text_len", c.max_text_len},
          {"max_answer_len", c.max_answer_len},
          {"prompt_prefix", c.prompt_prefix},
          {"detach_original", c.detach_original},
          {"detach_critic", c.detach_critic},
          {"original_sees_prompt", c.original_sees_prompt},
          {"vocab_size", c.vocab_size}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    c.grid = j.value("grid", c.grid);
    c.patch = j.value("patch", c.patch);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.top_k = j.value("top_k", c.top_k);
    c.global_stride = j.value("global_stride", c.global_stride);
    c.dedup = j.value("dedup", c.dedup);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.max_answer_len = j.value("max_answer_len", c.max_answer_len);
    c.prompt_prefix = j.value("prompt_prefix", c.prompt_prefix);
    c.detach_original = j.value("detach_original", c.detach_original);
    c.detach_critic = j.value("detach_critic", c.detach_critic);
    c.original_sees_prompt = j.value("original_sees_prompt", c.original_sees_prompt);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void Flags::validate() const {
  if (use_fda && !use_cif) throw FlagError("use_fda requires use_cif");
}

std::string Flags::arm_name() const {
  std::string s = !use_cif ? "baseline" : (use_fda ? "cif" : "cif_bypass");
  if (use_pm) s += "+pm";
  return s;
}

int closed_index(const std::vector<int>& answer) {
  if (answer.size() != 1) return -1;
  const auto& v = data::Vocab::builtin();
  for (int i = 0; i < kNumClosed; ++i) {
    if (answer[0] == v.id(kClosedAnswers[static_cast<std::size_t>(i)])) return i;
  }
  return -1;
}

int closed_token(int index) {
  if (index < 0 || index >= kNumClosed) throw RangeError("closed answer index out of range");
  return data::Vocab::builtin().id(kClosedAnswers[static_cast<std::size_t>(index)]);
}

}  // namespace cvqa::model
