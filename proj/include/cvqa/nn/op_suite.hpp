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

#include <string>
#include <vector>

#include "cvqa/nn/grad_check.hpp"

namespace cvqa::nn {

struct OpCheck {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every differentiable graph op and of the
/// attention, feed-forward and transformer layers, at float64 on random
/// inputs drawn from `seed`.
std::vector<OpCheck> check_all_ops(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace cvqa::nn
