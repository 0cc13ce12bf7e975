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
#include <span>
#include <vector>

#include "cvqa/train/trainer.hpp"

namespace cvqa::train {

/// Token masses laid out on the patch grid (side x side), normalized to sum 1.
nn::Matrix<double> cell_mass(const std::vector<double>& token_mass, int side);

/// Fraction of `cells` falling on the scene's lesion boxes, each token cell
/// spreading its mass evenly over its patch x patch pixels.
double region_mass(const nn::Matrix<double>& cells, const data::Scene& scene, int patch);

struct AttentionSet {
  std::vector<std::size_t> samples;  // dataset indices
  std::vector<nn::Matrix<double>> cells;
  std::vector<std::vector<int>> selected;  // empty when the arm has no CIF
};

/// Visual attention per sample. Arms with front-door adjustment report the
/// mediator attention credited to the selected image tokens; other arms
/// report the final encoder block's attention.
AttentionSet attention_maps(model::Model<float>& m, const model::Flags& flags, const PreparedSet& set,
                            int batch_size);

/// Mean region_mass over samples whose scene has at least one lesion.
double mean_region_mass(const AttentionSet& maps, const data::Dataset& ds, int patch);

struct ExportSummary {
  std::size_t exported = 0;
  double region_mass_cif = 0.0, region_mass_plain = 0.0;
};

/// Writes, per requested sample, <out>/sample_<i>_{cif,plain}.{csv,png} and
/// <out>/sample_<i>_topk.csv. The CIF map comes from `cif_checkpoint`; the
/// plain map from `plain_checkpoint` or, when empty, from the same weights
/// run without CIF. Throws IoError.
ExportSummary export_attention(const std::filesystem::path& cif_checkpoint,
                               const std::filesystem::path& plain_checkpoint, const data::Dataset& ds,
                               std::span<const std::size_t> samples, const std::filesystem::path& out_dir);

}  // namespace cvqa::train
