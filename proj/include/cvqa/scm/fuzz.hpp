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

#include "cvqa/scm/io.hpp"

namespace cvqa::scm {

struct FuzzReport {
  int trials = 0;
  /// Largest |front-door estimate - mutilation ground truth| over all entries.
  double max_error = 0.0;
  /// Largest |row sum - 1| of the front-door tables.
  double max_row_error = 0.0;
  double seconds = 0.0;
};

/// Random two-mediator SCMs (cardinalities drawn in [2, options.max_card])
/// compared against graph mutilation. Throws RangeError for trials < 1.
FuzzReport fuzz_frontdoor(int trials, std::uint64_t seed, const FuzzOptions& options = {});

}  // namespace cvqa::scm
