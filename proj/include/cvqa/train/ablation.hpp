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
#include <span>
#include <string>
#include <vector>

#include "cvqa/train/trainer.hpp"

namespace cvqa::train {

struct Arm {
  std::string name;
  model::Flags flags;
};

/// The CIF x PM grid plus the front-door bypass arm, in table order.
std::vector<Arm> ablation_arms();

struct RunResult {
  std::string arm;
  model::Flags flags;
  std::uint64_t seed = 0;
  Metrics metrics;
  std::filesystem::path checkpoint;
  /// Sum of the logged causal loss over all steps.
  double causal_loss_sum = 0.0;
};

struct ArmSummary {
  std::string arm;
  model::Flags flags;
  std::size_t seeds = 0;
  /// Keyed by metric name: accuracy_open, accuracy_closed, accuracy_overall, bleu1, f1.
  std::vector<std::pair<std::string, std::pair<double, double>>> mean_sd;
};

struct AblationResult {
  std::vector<RunResult> runs;
  std::vector<ArmSummary> summary;
};

using RunProgressFn = std::function<void(const RunResult&)>;

/// Trains every arm for every seed under <out>/<arm>/seed_<s>/ and scores the
/// saved last checkpoint on `test_set`. `arms` empty means all five.
/// Writes <out>/ablation.csv (mean and sample sd per arm) and <out>/runs.csv.
AblationResult ablate(const TrainConfig& base, std::span<const std::uint64_t> seeds, const data::Dataset& train_set,
                      const data::Dataset& test_set, const std::filesystem::path& out_dir,
                      std::span<const Arm> arms = {}, const RunProgressFn& progress = {});

std::vector<ArmSummary> summarize(std::span<const RunResult> runs);
void write_ablation_csv(std::span<const ArmSummary> summary, const std::filesystem::path& path);
void write_runs_csv(std::span<const RunResult> runs, const std::filesystem::path& path);

/// One-sided sign test: P(at least `wins` successes of `n` fair coin flips).
double sign_test_p(int wins, int n);

}  // namespace cvqa::train
