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
#include <optional>
#include <string>
#include <vector>

#include "cvqa/data/dataset.hpp"
#include "cvqa/data/templates.hpp"

namespace cvqa::prompt {

/// Fixed task instructions; one is chosen per prompt.
inline constexpr std::array<const char*, 5> kInstructions = {
    "Describe the following medical image in detail.",
    "Answer the question based on the medical image.",
    "Provide a detailed analysis of the medical image.",
    "Analyze the medical image and describe any abnormalities.",
    "Based on the image, provide a differential diagnosis.",
};

inline constexpr int kMaxPairs = 3;

struct QaPair {
  std::string question;
  std::string answer;
  /// Empty for free-form questions taken from ingested records.
  std::optional<data::TemplateId> template_id;
  bool corrupted = false;
};

struct PromptBundle {
  std::string instructions;
  std::vector<QaPair> qa_pairs;
  std::string question;
  std::vector<int> ids;
};

/// n QA pairs about the sample's image. With a scene, templates are drawn at
/// random and answered from it; otherwise pairs come from `siblings` (other
/// questions on the same image). Each answer is replaced by a wrong one with
/// probability noise_rate.
std::vector<QaPair> generate_qa_pairs(const data::VqaSample& sample, int n, double noise_rate, Rng& rng,
                                      const std::vector<const data::VqaSample*>& siblings = {});

/// Same, with siblings looked up in `ds`.
std::vector<QaPair> generate_qa_pairs(const data::Dataset& ds, std::size_t index, int n, double noise_rate,
                                      Rng& rng);

/// "<instructions> Q1: <q1> A1: <a1> ... Question: <q> A:".
std::string assemble_text(const std::string& instructions, const std::vector<QaPair>& pairs,
                          const std::string& question);

/// Token ids of assemble_text. With `strict`, words outside the vocabulary
/// raise VocabError; otherwise they map to the unknown token.
std::vector<int> assemble_prompt(const std::string& instructions, const std::vector<QaPair>& pairs,
                                 const std::string& question, bool strict = true);

/// Builds a bundle (pairs + random instruction) and fills its ids.
PromptBundle make_bundle(const data::Dataset& ds, std::size_t index, int n, double noise_rate, Rng& rng,
                         bool strict = true);

/// Fields recovered from an assembled prompt. Text is normalized (lowercase,
/// punctuation stripped), as the tokenizer sees it.
struct ParsedPrompt {
  std::string instructions;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string question;
};

/// Inverse of assemble_text; nullopt when the structure is malformed.
std::optional<ParsedPrompt> parse_prompt(const std::string& text);

/// True iff `text` follows the assembly format with 1-3 pairs whose questions
/// all match a known template.
bool validate_prompt(const std::string& text);

}  // namespace cvqa::prompt
