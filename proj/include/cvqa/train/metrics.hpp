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
#include <vector>

#include <json.hpp>

#include "cvqa/data/templates.hpp"

namespace cvqa::train {

/// Clipped unigram precision times the brevity penalty exp(min(0, 1 - r/c)).
/// Empty candidate scores 0; empty reference throws EmptyReference.
double bleu1(const std::vector<int>& candidate, const std::vector<int>& reference);

/// Harmonic mean of token-multiset precision and recall; empty candidate
/// scores 0; empty reference throws EmptyReference.
double f1_tokens(const std::vector<int>& candidate, const std::vector<int>& reference);

struct TypeAccuracy {
  long correct = 0;
  long total = 0;
  double accuracy() const { return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct Metrics {
  double accuracy_open = 0.0;
  double accuracy_closed = 0.0;
  double accuracy_overall = 0.0;
  /// Per-sample means over open questions.
  double bleu1 = 0.0;
  double f1 = 0.0;
  long n_open = 0;
  long n_closed = 0;
  /// Keyed by the question's leading word: Does/Is/Which/Where/What/How/Else.
  std::map<std::string, TypeAccuracy> per_type;
};

/// Accumulates predictions; closed answers compare the single predicted
/// token, open answers compare whole token sequences.
class MetricsAccumulator {
 public:
  void add(data::QType qtype, const std::string& type_key, const std::vector<int>& predicted,
           const std::vector<int>& reference);
  Metrics result() const;

 private:
  long open_correct_ = 0, closed_correct_ = 0, n_open_ = 0, n_closed_ = 0;
  double bleu_sum_ = 0.0, f1_sum_ = 0.0;
  std::map<std::string, TypeAccuracy> per_type_;
};

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

}  // namespace cvqa::train
