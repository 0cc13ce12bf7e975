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

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cvqa/rng.hpp"
#include "cvqa/scm/scm.hpp"

namespace cvqa::scm {

/// Parses `{"variables":[{"name","card"}], "parents":{...}, "cpts":{name: nested arrays}}`.
/// Throws ParseError on malformed documents; semantic checks happen in build_scm.
ScmSpec spec_from_json(const nlohmann::json& doc);
nlohmann::json spec_to_json(const ScmSpec& spec);
ScmSpec load_spec(const std::filesystem::path& path);

struct FuzzOptions {
  int max_card = 4;
  /// Adds the optional M_i -> M_q edge between the two mediators.
  bool mediator_link = false;
  /// When false the confounder does not reach I or Q (C_i and C_q ignore C).
  bool confound_inputs = true;
  /// Dirichlet-like concentration; small values give peaked CPT rows.
  double concentration = 1.0;
};

/// Random SCM with the two-mediator causal graph of the VQA setting:
///   C -> C_i -> I -> M_i,  C -> C_q -> Q -> M_q,  C -> A,  (M_i, M_q) -> A.
/// Every CPT entry is strictly positive.
ScmSpec random_vqa_spec(Rng& rng, const FuzzOptions& options = {});

}  // namespace cvqa::scm
