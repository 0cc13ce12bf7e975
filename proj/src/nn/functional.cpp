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

#include "cvqa/nn/functional.hpp"

#include <algorithm>
#include <cmath>

#include "cvqa/errors.hpp"

namespace cvqa::nn {
namespace {

double checked_max(std::span<const double> x) {
  if (x.empty()) throw ShapeError("softmax of an empty vector");
  for (double v : x) {
    if (!std::isfinite(v)) throw NonFiniteError("softmax input is not finite");
  }
  return *std::max_element(x.begin(), x.end());
}

}  // namespace

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = checked_max(logits);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = checked_max(logits);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace cvqa::nn
