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

#include "cvqa/train/metrics.hpp"

#include <cmath>

#include "cvqa/errors.hpp"

namespace cvqa::train {

namespace {

long overlap(const std::vector<int>& candidate, const std::vector<int>& reference) {
  std::map<int, long> ref;
  for (int t : reference) ++ref[t];
  long hits = 0;
  for (int t : candidate) {
    auto it = ref.find(t);
    if (it != ref.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  return hits;
}

}  // namespace

double bleu1(const std::vector<int>& candidate, const std::vector<int>& reference) {
  if (reference.empty()) throw EmptyReference("BLEU-1 needs a non-empty reference");
  if (candidate.empty()) return 0.0;
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double precision = static_cast<double>(overlap(candidate, reference)) / c;
  return precision * std::exp(std::min(0.0, 1.0 - r / c));
}

double f1_tokens(const std::vector<int>& candidate, const std::vector<int>& reference) {
  if (reference.empty()) throw EmptyReference("F1 needs a non-empty reference");
  if (candidate.empty()) return 0.0;
  const double hits = static_cast<double>(overlap(candidate, reference));
  if (hits == 0.0) return 0.0;
  const double p = hits / static_cast<double>(candidate.size());
  const double r = hits / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

void MetricsAccumulator::add(data::QType qtype, const std::string& type_key, const std::vector<int>& predicted,
                             const std::vector<int>& reference) {
  bool correct;
  if (qtype == data::QType::kClosed) {
    correct = predicted.size() == 1 && reference.size() == 1 && predicted[0] == reference[0];
    ++n_closed_;
    closed_correct_ += correct;
  } else {
    correct = predicted == reference;
    ++n_open_;
    open_correct_ += correct;
    bleu_sum_ += bleu1(predicted, reference);
    f1_sum_ += f1_tokens(predicted, reference);
  }
  auto& t = per_type_[type_key];
  ++t.total;
  t.correct += correct;
}

Metrics MetricsAccumulator::result() const {
  Metrics m;
  m.n_open = n_open_;
  m.n_closed = n_closed_;
  auto frac = [](double a, long b) { return b > 0 ? a / static_cast<double>(b) : 0.0; };
  m.accuracy_open = frac(static_cast<double>(open_correct_), n_open_);
  m.accuracy_closed = frac(static_cast<double>(closed_correct_), n_closed_);
  m.accuracy_overall = frac(static_cast<double>(open_correct_ + closed_correct_), n_open_ + n_closed_);
  m.bleu1 = frac(bleu_sum_, n_open_);
  m.f1 = frac(f1_sum_, n_open_);
  m.per_type = per_type_;
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [k, t] : m.per_type) types[k] = {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}};
  return {{"accuracy_open", m.accuracy_open},
          {"accuracy_closed", m.accuracy_closed},
          {"accuracy_overall", m.accuracy_overall},
          {"bleu1", m.bleu1},
          {"f1", m.f1},
          {"n_open", m.n_open},
          {"n_closed", m.n_closed},
          {"per_type", types}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  try {
    Metrics m;
    m.accuracy_open = j.at("accuracy_open").get<double>();
    m.accuracy_closed = j.at("accuracy_closed").get<double>();
    m.accuracy_overall = j.at("accuracy_overall").get<double>();
    m.bleu1 = j.at("bleu1").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.n_open = j.at("n_open").get<long>();
    m.n_closed = j.at("n_closed").get<long>();
    for (const auto& [k, t] : j.at("per_type").items()) {
      m.per_type[k] = {t.at("correct").get<long>(), t.at("total").get<long>()};
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("metrics: ") + e.what());
  }
}

}  // namespace cvqa::train
