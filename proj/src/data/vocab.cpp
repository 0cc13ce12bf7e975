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

#include "cvqa/data/vocab.hpp"

#include <cctype>

#include "cvqa/errors.hpp"

namespace cvqa::data {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && (cur.back() == '?' || cur.back() == '.' || cur.back() == ',' || cur.back() == '!')) {
      cur.pop_back();
    }
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw VocabError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

const Vocab& Vocab::builtin() {
  static const Vocab v({
      // special
      "<pad>", "<unk>", "<bos>", "<eos>",
      // prompt structure
      "q1:", "a1:", "q2:", "a2:", "q3:", "a3:", "question:", "a:",
      // template words
      "what", "which", "where", "is", "are", "the", "in", "image", "located", "this", "a", "an", "does",
      "contain", "side", "disease", "diseases", "organ", "abnormality",
      // entities and answers
      "effusion", "infiltration", "nodule", "mass", "lung", "heart", "liver", "xray", "ct", "mri", "left",
      "right", "upper", "lower", "center", "yes", "no",
      // instruction words
      "describe", "following", "medical", "detail", "answer", "question", "based", "on", "provide",
      "detailed", "analysis", "of", "analyze", "and", "any", "abnormalities", "differential", "diagnosis",
  });
  return v;
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int t : ids) {
    if (t == kPad || t == kBos || t == kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(t);
  }
  return out;
}

void Vocab::check(const std::vector<int>& ids) const {
  for (int t : ids) {
    if (t < 0 || t >= size()) throw VocabError("token id " + std::to_string(t) + " outside vocabulary");
  }
}

}  // namespace cvqa::data
