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

#include "cvqa/model/encoders.hpp"

#include <algorithm>
#include <numeric>

#include "cvqa/errors.hpp"

namespace cvqa::model {

namespace {

template <typename T>
int normal_param(ParameterStore<T>& store, const std::string& name, int rows, int cols, double sd, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * standard_normal(rng));
  return store.add(name, std::move(m), false);
}

template <typename T>
Var<T> tile_rows(Var<T> x, int times) {
  if (times == 1) return x;
  std::vector<Var<T>> parts(static_cast<std::size_t>(times), x);
  return nn::concat_rows<T>(parts);
}

}  // namespace

Matrix<double> patchify(const data::Image& image, int patch) {
  if (image.rows() != image.cols() || image.rows() % patch != 0) {
    throw ShapeError("image of " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                     " cannot be split into " + std::to_string(patch) + "-pixel patches");
  }
  const int side = static_cast<int>(image.rows()) / patch;
  Matrix<double> out(side * side, patch * patch);
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      for (int r = 0; r < patch; ++r) {
        for (int c = 0; c < patch; ++c) out(pr * side + pc, r * patch + c) = image(pr * patch + r, pc * patch + c);
      }
    }
  }
  return out;
}

template <typename T>
ImageEncoder<T> ImageEncoder<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                        Rng& rng) {
  ImageEncoder e;
  e.grid = cfg.grid;
  e.patch = cfg.patch;
  e.embed = nn::Linear<T>::create(store, prefix + ".patch", cfg.patch * cfg.patch, cfg.dim, rng);
  e.positions = normal_param(store, prefix + ".pos", cfg.tokens(), cfg.dim, 0.1, rng);
  for (int b = 0; b < cfg.encoder_blocks; ++b) {
    e.blocks.push_back(nn::TransformerBlock<T>::create(store, prefix + ".block" + std::to_string(b), cfg.dim,
                                                       cfg.heads, cfg.ffn_hidden, rng));
  }
  e.norm = nn::LayerNorm<T>::create(store, prefix + ".ln", cfg.dim);
  return e;
}

template <typename T>
Var<T> ImageEncoder<T>::patch_embed(Graph<T>& g, std::span<const data::Image* const> images) const {
  if (images.empty()) throw ShapeError("empty image batch");
  const int tokens = (grid / patch) * (grid / patch);
  Matrix<T> stacked(static_cast<Eigen::Index>(images.size()) * tokens, patch * patch);
  for (std::size_t s = 0; s < images.size(); ++s) {
    if (images[s] == nullptr) throw ShapeError("missing image");
    if (images[s]->rows() != grid || images[s]->cols() != grid) {
      throw ShapeError("image is " + std::to_string(images[s]->rows()) + "x" + std::to_string(images[s]->cols()) +
                       ", model expects " + std::to_string(grid) + "x" + std::to_string(grid));
    }
    stacked.middleRows(static_cast<Eigen::Index>(s) * tokens, tokens) = patchify(*images[s], patch).cast<T>();
  }
  return embed(g, g.constant(std::move(stacked)));
}

template <typename T>
Var<T> ImageEncoder<T>::operator()(Graph<T>& g, std::span<const data::Image* const> images,
                                   AttentionMaps<T>* last_maps) const {
  const int batch = static_cast<int>(images.size());
  const int tokens = (grid / patch) * (grid / patch);
  auto x = nn::add(patch_embed(g, images), tile_rows(g.param(positions), batch));
  const auto offsets = nn::uniform_offsets(batch, tokens);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    x = blocks[b](g, x, &offsets, false, b + 1 == blocks.size() ? last_maps : nullptr);
  }
  return norm(g, x);
}

template <typename T>
TextEncoder<T> TextEncoder<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                      Rng& rng) {
  TextEncoder e;
  e.vocab = cfg.resolved_vocab();
  e.max_len = cfg.max_text_len;
  e.embedding = normal_param(store, prefix + ".embed", e.vocab, cfg.dim, 1.0, rng);
  e.positions = normal_param(store, prefix + ".pos", cfg.max_text_len, cfg.dim, 0.1, rng);
  for (int b = 0; b < cfg.encoder_blocks; ++b) {
    e.blocks.push_back(nn::TransformerBlock<T>::create(store, prefix + ".block" + std::to_string(b), cfg.dim,
                                                       cfg.heads, cfg.ffn_hidden, rng));
  }
  e.norm = nn::LayerNorm<T>::create(store, prefix + ".ln", cfg.dim);
  return e;
}

template <typename T>
Var<T> TextEncoder<T>::operator()(Graph<T>& g, std::span<const std::vector<int>* const> sequences,
                                  Offsets& offsets) const {
  if (sequences.empty()) throw ShapeError("empty text batch");
  std::vector<int> ids, pos;
  offsets.assign(1, 0);
  for (const auto* seq : sequences) {
    if (seq->empty()) throw ShapeError("empty token sequence");
    if (static_cast<int>(seq->size()) > max_len) {
      throw ShapeError("sequence of " + std::to_string(seq->size()) + " tokens exceeds " + std::to_string(max_len));
    }
    for (std::size_t i = 0; i < seq->size(); ++i) {
      const int t = (*seq)[i];
      if (t < 0 || t >= vocab) throw VocabError("token id " + std::to_string(t) + " outside the vocabulary");
      ids.push_back(t);
      pos.push_back(static_cast<int>(i));
    }
    offsets.push_back(static_cast<int>(ids.size()));
  }
  auto x = nn::add(nn::gather_rows<T>(g.param(embedding), ids), nn::gather_rows<T>(g.param(positions), pos));
  for (const auto& block : blocks) x = block(g, x, &offsets);
  return norm(g, x);
}

template <typename T>
FmmGlobal<T> FmmGlobal<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                  Rng& rng) {
  FmmGlobal f;
  f.stride = cfg.global_stride;
  f.block = nn::TransformerBlock<T>::create(store, prefix + ".block", cfg.dim, cfg.heads, cfg.ffn_hidden, rng);
  return f;
}

template <typename T>
Var<T> FmmGlobal<T>::pool(Var<T> f_i, int tokens) const {
  if (tokens % stride != 0 || f_i.rows() % tokens != 0) {
    throw ShapeError("global pooling: " + std::to_string(tokens) + " tokens not a multiple of stride " +
                     std::to_string(stride));
  }
  return nn::pool_rows(f_i, stride);
}

template <typename T>
Var<T> FmmGlobal<T>::operator()(Graph<T>& g, Var<T> f_i, int batch, int tokens) const {
  auto pooled = pool(f_i, tokens);
  const auto offsets = nn::uniform_offsets(batch, tokens / stride);
  return block(g, pooled, &offsets);
}

template <typename T>
std::vector<int> select_local_tokens(std::span<const Matrix<T>> head_maps, int k, bool dedup) {
  if (head_maps.empty()) throw ShapeError("local selection needs at least one attention map");
  const int n = static_cast<int>(head_maps[0].cols());
  if (k < 1 || k > n) throw ShapeError("top-k of " + std::to_string(k) + " over " + std::to_string(n) + " tokens");
  std::vector<int> out;
  Eigen::Matrix<double, 1, Eigen::Dynamic> total = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(n);
  for (const auto& map : head_maps) {
    if (map.cols() != n) throw ShapeError("attention maps of one sample differ in width");
    const Eigen::Matrix<double, 1, Eigen::Dynamic> score = map.template cast<double>().colwise().mean();
    total += score;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score(a) > score(b); });
    out.insert(out.end(), order.begin(), order.begin() + k);
  }
  if (!dedup) return out;
  const std::size_t target = out.size();
  std::vector<int> unique;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int i : out) {
    if (!used[static_cast<std::size_t>(i)]) {
      used[static_cast<std::size_t>(i)] = true;
      unique.push_back(i);
    }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return total(a) > total(b); });
  for (int i : order) {
    if (unique.size() >= target) break;
    if (!used[static_cast<std::size_t>(i)]) {
      used[static_cast<std::size_t>(i)] = true;
      unique.push_back(i);
    }
  }
  if (unique.size() < target) throw ShapeError("dedup: not enough tokens to keep heads * k");
  return unique;
}

template <typename T>
LocalFeatures<T> fmm_local(Var<T> f_i, const AttentionMaps<T>& maps, int batch, int tokens, int heads, int k,
                           bool dedup) {
  if (static_cast<int>(maps.size()) != batch * heads) throw ShapeError("fmm_local: map count != batch * heads");
  if (f_i.rows() != static_cast<Eigen::Index>(batch) * tokens) throw ShapeError("fmm_local: token count mismatch");
  LocalFeatures<T> out;
  std::vector<int> rows;
  for (int s = 0; s < batch; ++s) {
    std::span<const Matrix<T>> head_maps(maps.data() + static_cast<std::size_t>(s) * heads,
                                         static_cast<std::size_t>(heads));
    if (head_maps[0].cols() != tokens) throw ShapeError("fmm_local: map width != token count");
    auto idx = select_local_tokens<T>(head_maps, k, dedup);
    for (int i : idx) rows.push_back(s * tokens + i);
    out.indices.push_back(std::move(idx));
  }
  out.f_il = nn::gather_rows<T>(f_i, rows);
  return out;
}

#define CVQA_INSTANTIATE(T)                                                                                   \
  template struct ImageEncoder<T>;                                                                            \
  template struct TextEncoder<T>;                                                                             \
  template struct FmmGlobal<T>;                                                                               \
  template std::vector<int> select_local_tokens<T>(std::span<const Matrix<T>>, int, bool);                    \
  template LocalFeatures<T> fmm_local<T>(Var<T>, const AttentionMaps<T>&, int, int, int, int, bool);

CVQA_INSTANTIATE(float)
CVQA_INSTANTIATE(double)

}  // namespace cvqa::model
