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
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvqa/data/scene.hpp"
#include "cvqa/data/templates.hpp"
#include "cvqa/data/vocab.hpp"

namespace cvqa::data {

struct GenConfig {
  int grid_size = 32;
  /// Probability that the latent confounder fixes pathology, location and
  /// modality together.
  double rho = 0.5;
  /// Class-prior skew: P(C = c) is proportional to gamma^-c.
  double gamma = 1.0;
  /// Probability of a second, different lesion in another quadrant.
  double cooccurrence_rate = 0.0;
  int n_samples = 1000;
  int questions_per_image = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const GenConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
GenConfig gen_config_from_json(const nlohmann::json& j);

struct VqaSample {
  /// Shared between the questions of one image. Null for ingested records
  /// whose image file could not be read.
  std::shared_ptr<const Image> image;
  /// Image file reference (relative path or external name).
  std::string image_ref;
  int image_id = -1;
  std::vector<int> question;
  std::vector<int> answer;
  QType qtype = QType::kOpen;
  std::optional<Scene> scene;
  /// Generator side info: the latent confounder value.
  int confounder = -1;
};

struct Dataset {
  std::vector<VqaSample> samples;
  /// Present for generated data; needed to regenerate an OOD test split.
  std::optional<GenConfig> config;

  std::size_t size() const { return samples.size(); }
  /// Indices of samples sharing `image_id` with samples[i], excluding i.
  std::vector<std::size_t> siblings(std::size_t i) const;
};

/// Draws a scene for image `index` with its latent confounder value.
Scene sample_scene(const GenConfig& config, std::uint64_t index, int* confounder = nullptr);

Dataset generate_dataset(const GenConfig& config);

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Image-level shuffle split with ceil-free sizes: train gets
/// round(train_frac * n) samples. With `test_rho`, the test split is instead
/// regenerated at that confound strength with the same size.
SplitResult split(const Dataset& dataset, double train_frac, std::uint64_t seed,
                  std::optional<double> test_rho = std::nullopt);

/// Plug-in mutual information (nats) between the primary lesion type and its
/// quadrant, over distinct images carrying a scene.
double pathology_location_mi(const Dataset& dataset);

enum class ImageStorage { kInline, kFiles };

/// Writes `<dir>/dataset.json`; with kFiles, images go to `<dir>/images/` as
/// 16-bit PGM and the JSON holds relative paths.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, ImageStorage storage);
nlohmann::json dataset_to_json(const Dataset& ds, const std::filesystem::path& image_dir = {});
/// Reads a dataset in this project's schema. Image paths resolve relative to
/// the file's directory.
Dataset load_dataset(const std::filesystem::path& file);
Dataset dataset_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// SLAKE ("slake-json") or VQA-RAD ("vqarad-json") record lists.
Dataset load_external(const std::filesystem::path& file, const std::string& format, int grid_size = 32);

}  // namespace cvqa::data
