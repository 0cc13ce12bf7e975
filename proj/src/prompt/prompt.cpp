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

#include "cvqa/prompt/prompt.hpp"

#include <algorithm>
#include <cctype>

#include "cvqa/errors.hpp"

namespace cvqa::prompt {

using data::TemplateId;

namespace {

void check_count(int n) {
  if (n < 1 || n > kMaxPairs) throw RangeError("QA pair count " + std::to_string(n) + " outside [1, 3]");
}

void check_rate(double noise_rate) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw RangeError("noise_rate must lie in [0, 1]");
}

std::string join(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

// "q3:" -> ('q', 3); anything else -> nullopt.
std::optional<std::pair<char, int>> marker(const std::string& w) {
  if (w == "question:") return std::pair{'Q', 0};
  if (w == "a:") return std::pair{'A', 0};
  if (w.size() < 3 || w.back() != ':' || (w[0] != 'q' && w[0] != 'a')) return std::nullopt;
  int k = 0;
  for (std::size_t i = 1; i + 1 < w.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(w[i]))) return std::nullopt;
    k = k * 10 + (w[i] - '0');
    if (k > 1000) return std::nullopt;
  }
  return std::pair{w[0], k};
}

QaPair from_scene(const data::Scene& scene, Rng& rng) {
  // Every generated scene supports at least the yes/no templates, so this
  // terminates; the bound guards hand-built scenes.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto id = static_cast<TemplateId>(uniform_index(rng, data::kNumTemplates));
    try {
      auto qa = data::make_question_answer(scene, id, rng);
      return {qa.question, qa.answer, qa.parsed.id, false};
    } catch (const TemplateMismatch&) {
    }
  }
  throw TemplateMismatch("no template applies to this scene");
}

QaPair from_sibling(const data::VqaSample& s) {
  const auto& v = data::Vocab::builtin();
  QaPair p;
  p.question = v.decode(s.question);
  p.answer = v.decode(s.answer);
  if (auto parsed = data::parse_question(data::tokenize(p.question))) p.template_id = parsed->id;
  return p;
}

void corrupt(QaPair& p, Rng& rng) {
  if (p.template_id) {
    const auto parsed = data::parse_question(data::tokenize(p.question));
    p.answer = data::corrupt_answer(*parsed, p.answer, rng);
    p.corrupted = true;
  } else if (p.answer == "yes" || p.answer == "no") {
    p.answer = p.answer == "yes" ? "no" : "yes";
    p.corrupted = true;
  }
  // Free-form open answers have no plausible alternative; left as is.
}

}  // namespace

std::vector<QaPair> generate_qa_pairs(const data::VqaSample& sample, int n, double noise_rate, Rng& rng,
                                      const std::vector<const data::VqaSample*>& siblings) {
  check_count(n);
  check_rate(noise_rate);
  std::vector<QaPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  if (sample.scene) {
    for (int i = 0; i < n; ++i) pairs.push_back(from_scene(*sample.scene, rng));
  } else {
    if (siblings.empty()) throw NoSourceError("sample has neither a scene nor sibling questions");
    std::vector<std::size_t> order(siblings.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < n; ++i) pairs.push_back(from_sibling(*siblings[order[static_cast<std::size_t>(i) % order.size()]]));
  }
  for (auto& p : pairs) {
    if (bernoulli(rng, noise_rate)) corrupt(p, rng);
  }
  return pairs;
}

std::vector<QaPair> generate_qa_pairs(const data::Dataset& ds, std::size_t index, int n, double noise_rate,
                                      Rng& rng) {
  std::vector<const data::VqaSample*> siblings;
  if (!ds.samples.at(index).scene) {
    for (std::size_t j : ds.siblings(index)) siblings.push_back(&ds.samples[j]);
  }
  return generate_qa_pairs(ds.samples[index], n, noise_rate, rng, siblings);
}

std::string assemble_text(const std::string& instructions, const std::vector<QaPair>& pairs,
                          const std::string& question) {
  check_count(static_cast<int>(pairs.size()));
  std::string out = instructions;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].answer.empty()) throw SchemaError("QA pair with empty answer");
    const auto k = std::to_string(i + 1);
    if (!out.empty()) out += ' ';
    out += "Q" + k + ": " + pairs[i].question + " A" + k + ": " + pairs[i].answer;
  }
  out += " Question: " + question + " A:";
  return out;
}

std::vector<int> assemble_prompt(const std::string& instructions, const std::vector<QaPair>& pairs,
                                 const std::string& question, bool strict) {
  const auto& v = data::Vocab::builtin();
  const auto text = assemble_text(instructions, pairs, question);
  if (strict) {
    for (const auto& w : data::tokenize(text)) {
      if (!v.contains(w)) throw VocabError("prompt word '" + w + "' is not in the vocabulary");
    }
  }
  return v.encode(text);
}

PromptBundle make_bundle(const data::Dataset& ds, std::size_t index, int n, double noise_rate, Rng& rng,
                         bool strict) {
  PromptBundle b;
  b.instructions = kInstructions[uniform_index(rng, kInstructions.size())];
  b.qa_pairs = generate_qa_pairs(ds, index, n, noise_rate, rng);
  b.question = data::Vocab::builtin().decode(ds.samples[index].question);
  b.ids = assemble_prompt(b.instructions, b.qa_pairs, b.question, strict);
  return b;
}

std::optional<ParsedPrompt> parse_prompt(const std::string& text) {
  const auto words = data::tokenize(text);
  // Positions of structure markers in order.
  std::vector<std::pair<std::size_t, std::pair<char, int>>> marks;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (auto m = marker(words[i])) marks.emplace_back(i, *m);
  }
  // Expect q1 a1 ... qn an Question A, with A last.
  if (marks.size() < 4 || marks.size() % 2 != 0) return std::nullopt;
  const std::size_t n = (marks.size() - 2) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i + 1);
    if (marks[2 * i].second != std::pair{'q', k} || marks[2 * i + 1].second != std::pair{'a', k}) return std::nullopt;
  }
  if (marks[2 * n].second.first != 'Q' || marks[2 * n + 1].second.first != 'A') return std::nullopt;
  if (marks.back().first != words.size() - 1) return std::nullopt;

  ParsedPrompt p;
  p.instructions = join(words, 0, marks[0].first);
  for (std::size_t i = 0; i < n; ++i) {
    const auto q0 = marks[2 * i].first + 1, a0 = marks[2 * i + 1].first;
    const auto a1 = marks[2 * i + 2].first;
    if (q0 == a0 || a0 + 1 == a1) return std::nullopt;
    p.pairs.emplace_back(join(words, q0, a0), join(words, a0 + 1, a1));
  }
  const auto qs = marks[2 * n].first + 1, qe = marks[2 * n + 1].first;
  if (qs == qe) return std::nullopt;
  p.question = join(words, qs, qe);
  return p;
}

bool validate_prompt(const std::string& text) {
  const auto p = parse_prompt(text);
  if (!p || p->pairs.empty() || p->pairs.size() > static_cast<std::size_t>(kMaxPairs)) return false;
  return std::all_of(p->pairs.begin(), p->pairs.end(),
                     [](const auto& qa) { return data::parse_question(data::tokenize(qa.first)).has_value(); });
}

}  // namespace cvqa::prompt
