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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvqa/data/dataset.hpp"
#include "cvqa/model/model.hpp"
#include "cvqa/train/metrics.hpp"

namespace cvqa::train {

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_final = 1e-7;
  double weight_decay = 0.05;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 0;
  model::Flags flags;
  bool freeze_encoders = false;
  /// QA pairs per prompt and the chance each pair's answer is wrong.
  int prompt_pairs = 3;
  double prompt_noise = 0.2;
  /// Seed of the per-sample prompts, shared by training and evaluation.
  std::uint64_t prompt_seed = 0;
  double clip_norm = 0.0;
  model::ModelConfig model;

  void validate() const;  // ConfigError / FlagError
};

nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys are rejected; `flags` and `model` are nested objects.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// A dataset turned into model inputs: prompts, answers clipped to the
/// decoder budget, and the question form actually trained (closed questions
/// whose answer lies outside the closed answer set are handled as open).
struct PreparedSet {
  const data::Dataset* dataset = nullptr;
  std::vector<std::size_t> index;  // dataset sample of each example
  std::vector<std::vector<int>> prompts, answers;
  std::vector<std::string> type_keys;
  std::vector<model::Example> examples;
  std::size_t skipped = 0;  // samples without a readable image

  std::size_t size() const { return examples.size(); }
};

PreparedSet prepare(const data::Dataset& ds, const TrainConfig& c);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lambda_mean = 0.0;
  std::optional<Metrics> val;
};

struct TrainResult {
  std::filesystem::path last, best;
  std::vector<EpochStats> history;
  long steps = 0;
  double final_lr = 0.0;
};

using ProgressFn = std::function<void(const EpochStats&)>;

/// Trains a float32 model. Writes <out>/checkpoint_last, <out>/checkpoint_best
/// (by validation accuracy, or by training loss without a validation set)
/// and <out>/train_log.csv. A non-finite loss saves <out>/diverged and
/// throws DivergenceError.
TrainResult train(const TrainConfig& config, const data::Dataset& train_set, const data::Dataset* val_set,
                  const std::filesystem::path& out_dir, const ProgressFn& progress = {});

struct LoadedModel {
  std::unique_ptr<model::Model<float>> model;
  TrainConfig config;
};

LoadedModel load_trained(const std::filesystem::path& stem);

struct PredictionRecord {
  std::size_t sample = 0;
  model::Prediction prediction;
  model::Diagnostics diagnostics;  // this sample only
};

/// Predictions (and per-sample diagnostics when `records` is given) over a
/// prepared set, in batches of the configured size.
Metrics evaluate(model::Model<float>& m, const model::Flags& flags, const PreparedSet& set, int batch_size,
                 std::vector<PredictionRecord>* records = nullptr);
Metrics evaluate(const std::filesystem::path& checkpoint_stem, const data::Dataset& ds);

}  // namespace cvqa::train
