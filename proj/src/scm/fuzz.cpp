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

#include "cvqa/scm/fuzz.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "cvqa/errors.hpp"
#include "cvqa/scm/scm.hpp"

namespace cvqa::scm {

FuzzReport fuzz_frontdoor(int trials, std::uint64_t seed, const FuzzOptions& options) {
  if (trials < 1) throw RangeError("trials must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  FuzzReport r;
  r.trials = trials;
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, "scm_fuzz", static_cast<std::uint64_t>(t));
    FuzzOptions opt = options;
    // Alternate the optional mediator link so both topologies are covered.
    opt.mediator_link = options.mediator_link || (t % 2 == 1);
    auto scm = build_scm(random_vqa_spec(rng, opt));
    check_frontdoor_criterion(scm, {"I", "Q"}, {"M_i", "M_q"}, "A");
    auto fd = frontdoor_estimate(scm, {"I", "Q"}, {"M_i", "M_q"}, "A");
    auto truth = interventional(scm, {"I", "Q"}, "A");
    if (fd.probs.size() != truth.probs.size()) throw ShapeError("front-door and ground-truth tables differ in shape");
    for (std::size_t k = 0; k < fd.probs.size(); ++k) {
      r.max_error = std::max(r.max_error, std::abs(fd.probs[k] - truth.probs[k]));
    }
    for (std::size_t row = 0; row < fd.rows(); ++row) {
      auto v = fd.row(row);
      r.max_row_error = std::max(r.max_row_error, std::abs(std::accumulate(v.begin(), v.end(), 0.0) - 1.0));
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace cvqa::scm
