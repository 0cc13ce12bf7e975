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

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cvqa::data {

/// Closed word-level vocabulary shared by questions, answers and prompts.
/// Ids are fixed by construction order, so a dataset and a checkpoint built
/// by the same binary always agree.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  /// The built-in vocabulary: special tokens, prompt structure tokens,
  /// template words, entity names and instruction words.
  static const Vocab& builtin();

  explicit Vocab(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  /// Id of `word`, or kUnk.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;

  /// Lowercases, splits on whitespace and strips trailing '?', '.', ','
  /// (but keeps a trailing ':'). Unknown words map to kUnk.
  std::vector<int> encode(std::string_view text) const;
  /// Space-joined words, skipping pad/bos/eos.
  std::string decode(const std::vector<int>& ids) const;

  /// Throws VocabError if any id is outside the vocabulary.
  void check(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

/// Lowercased words of `text` with surrounding punctuation removed.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace cvqa::data
