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
#include <string>
#include <vector>

#include "cvqa/data/scene.hpp"

namespace cvqa::data {

enum class TemplateId { kWhat, kWhich, kWhere, kIs, kDoes, kWhichSide };
inline constexpr int kNumTemplates = 6;

enum class QType { kOpen, kClosed };

const char* name(TemplateId t);
const char* name(QType q);
std::optional<TemplateId> template_from(const std::string& s);
std::optional<QType> qtype_from(const std::string& s);
QType qtype_of(TemplateId t);

/// What a question asks about. `value` indexes the matching enum; it is
/// unused for the "which disease(s)" / "what organ" listing questions.
struct Subject {
  enum class Kind { kDisease, kOrgan, kModality };
  Kind kind = Kind::kDisease;
  int value = 0;
  bool operator==(const Subject&) const = default;
};

struct ParsedQuestion {
  TemplateId id = TemplateId::kWhat;
  Subject subject;
  bool operator==(const ParsedQuestion&) const = default;
};

struct QaText {
  std::string question;
  std::string answer;
  ParsedQuestion parsed;
};

/// Question text for a template and subject. Listing questions agree in
/// number with `plural`.
std::string question_text(const ParsedQuestion& q, bool plural = false);

/// Ground-truth answer of `q` on `scene`. Throws TemplateMismatch when the
/// question has no answer there (e.g. "Where" for an absent lesion).
std::string answer_for(const Scene& scene, const ParsedQuestion& q);

/// Draws a subject compatible with `scene` and returns the instantiated
/// question and its answer. Throws TemplateMismatch when the template cannot
/// be instantiated (e.g. "Where" on an empty scene).
QaText make_question_answer(const Scene& scene, TemplateId id, Rng& rng);

/// Inverse of question_text: the template and subject of a tokenized question,
/// or nullopt when it matches no template.
std::optional<ParsedQuestion> parse_question(const std::vector<std::string>& words);

/// Per-type bucket used in evaluation tables: the capitalized leading word
/// when it is one of Does/Is/Which/Where/What/How, otherwise "Else".
std::string question_type_key(const std::vector<std::string>& words);

/// Plausible wrong answer for the same question (for prompt-noise injection):
/// another answer of the same kind that differs from `truth`.
std::string corrupt_answer(const ParsedQuestion& q, const std::string& truth, Rng& rng);

}  // namespace cvqa::data
