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

#include <span>
#include <vector>

#include "cvqa/data/scene.hpp"
#include "cvqa/model/config.hpp"
#include "cvqa/nn/layers.hpp"

namespace cvqa::model {

using nn::AttentionMaps;
using nn::Graph;
using nn::Matrix;
using nn::Offsets;
using nn::ParameterStore;
using nn::Var;

/// Rows are non-overlapping patch x patch tiles in row-major tile order; each
/// row holds the tile's pixels row-major.
Matrix<double> patchify(const data::Image& image, int patch);

/// Patch embedding + learned positions + transformer blocks + final norm.
template <typename T>
struct ImageEncoder {
  nn::Linear<T> embed;
  int positions = -1;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
  int grid = 0, patch = 0;

  static ImageEncoder create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  /// Pre-position embeddings of a stacked batch: (B * tokens) x d.
  Var<T> patch_embed(Graph<T>& g, std::span<const data::Image* const> images) const;
  /// Encoded tokens of a stacked batch. `last_maps` receives the final
  /// block's attention, maps[s * heads + h].
  Var<T> operator()(Graph<T>& g, std::span<const data::Image* const> images,
                    AttentionMaps<T>* last_maps = nullptr) const;
};

/// Token embedding + learned positions + transformer blocks + final norm,
/// over variable-length sequences stacked with `offsets`.
template <typename T>
struct TextEncoder {
  int embedding = -1;
  int positions = -1;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
  int vocab = 0, max_len = 0;

  static TextEncoder create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  /// Throws VocabError for ids outside the vocabulary and ShapeError for
  /// empty or over-long sequences.
  Var<T> operator()(Graph<T>& g, std::span<const std::vector<int>* const> sequences, Offsets& offsets) const;
};

/// Down-sampled global tokens: mean of each run of `stride` tokens, then one
/// transformer block.
template <typename T>
struct FmmGlobal {
  nn::TransformerBlock<T> block;
  int stride = 4;

  static FmmGlobal create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  /// f_i holds `batch` sequences of `tokens` rows each.
  Var<T> operator()(Graph<T>& g, Var<T> f_i, int batch, int tokens) const;
  /// Pooled tokens before the block.
  Var<T> pool(Var<T> f_i, int tokens) const;
};

/// Per head: the k tokens receiving the most attention (column means of the
/// head's map), ties to the lower index, in descending score order. Heads are
/// concatenated in order. With `dedup`, repeats are dropped and the result is
/// refilled with the best remaining tokens by head-averaged score.
template <typename T>
std::vector<int> select_local_tokens(std::span<const Matrix<T>> head_maps, int k, bool dedup = false);

template <typename T>
struct LocalFeatures {
  Var<T> f_il;
  /// Per sample, token index within the sample's image.
  std::vector<std::vector<int>> indices;
};

/// Gathers the selected tokens of every sample in a stacked batch. `maps`
/// are the final encoder block's maps, maps[s * heads + h].
template <typename T>
LocalFeatures<T> fmm_local(Var<T> f_i, const AttentionMaps<T>& maps, int batch, int tokens, int heads, int k,
                           bool dedup = false);

}  // namespace cvqa::model
