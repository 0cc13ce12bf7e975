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

#include <vector>

#include "cvqa/nn/tensor.hpp"

namespace cvqa::train {

/// Cosine annealing from lr_init at step 0 to lr_final at step total-1.
struct CosineSchedule {
  double lr_init = 1e-4;
  double lr_final = 1e-7;
  long total_steps = 1;

  double at(long step) const;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// Adam with decoupled weight decay, applied to parameters flagged `decay`.
/// Frozen parameters are skipped.
template <typename T>
class AdamW {
 public:
  AdamW(nn::ParameterStore<T>& store, AdamWOptions options);
  /// One update with learning rate `lr` from the store's grad buffers.
  /// Returns the pre-clip global gradient norm.
  double step(double lr);
  long steps() const { return t_; }

 private:
  nn::ParameterStore<T>& store_;
  AdamWOptions opt_;
  std::vector<nn::Matrix<T>> m_, v_;
  long t_ = 0;
};

}  // namespace cvqa::train
