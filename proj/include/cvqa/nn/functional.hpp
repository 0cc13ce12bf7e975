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

#include <span>
#include <vector>

namespace cvqa::nn {

/// Softmax of a finite vector, computed after shifting by the maximum.
/// Throws NonFiniteError on NaN or infinite input.
std::vector<double> softmax(std::span<const double> logits);

/// log(softmax(logits)) evaluated as x - logsumexp(x).
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace cvqa::nn
