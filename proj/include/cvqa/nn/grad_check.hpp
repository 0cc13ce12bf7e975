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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cvqa/nn/graph.hpp"

namespace cvqa::nn {

struct GradCheckOptions {
  /// Step of the central differences.
  double eps = 1e-3;
  /// 2: (f(x+h) - f(x-h)) / 2h. 4: the fourth-order central stencil, whose
  /// smaller truncation error allows a larger step and so less roundoff.
  int stencil = 4;
  /// Lower bound of the relative-error denominator, so entries whose true
  /// gradient is ~0 are judged by absolute error.
  double floor = 1e-6;
  /// Multiplies the analytic gradient before comparison (fault injection).
  double analytic_scale = 1.0;
  /// Checks at most this many randomly chosen entries per tensor (0 = all).
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  /// "<tensor>[index]" of the worst relative error.
  std::string worst;
};

/// Builds the function under test on a fresh graph from its input leaves.
/// Non-scalar outputs are reduced with a fixed random projection.
using GraphFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Compares backprop gradients with central differences for every input
/// entry and, when `store` is given, every trainable parameter entry.
GradCheckReport grad_check(const GraphFn& op, const std::vector<Matrix<double>>& inputs,
                           const GradCheckOptions& options = {}, ParameterStore<double>* store = nullptr);

}  // namespace cvqa::nn
