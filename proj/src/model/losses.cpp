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

#include "cvqa/model/losses.hpp"

#include <cmath>

#include "cvqa/data/vocab.hpp"
#include "cvqa/errors.hpp"

namespace cvqa::model {

double loss_closed(const Matrix<double>& probs, std::span<const int> targets) {
  if (static_cast<std::size_t>(probs.rows()) != targets.size() || targets.empty()) {
    throw ShapeError("loss_closed: one target per row required");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= probs.cols()) throw RangeError("loss_closed: target outside the answer set");
    sum -= std::log(probs(static_cast<Eigen::Index>(i), targets[i]));
  }
  return sum / static_cast<double>(targets.size());
}

double loss_causal(std::span<const double> p_causal, std::span<const double> p_orig, double eps) {
  if (p_causal.size() != p_orig.size()) throw ShapeError("loss_causal: distributions differ in size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p_causal.size(); ++i) {
    if (p_causal[i] > 0.0) kl += p_causal[i] * (std::log(p_causal[i] + eps) - std::log(p_orig[i] + eps));
  }
  return kl;
}

double total_loss(std::optional<data::QType> qtype, const LossComponents& c) {
  if (qtype == data::QType::kClosed) {
    if (!c.closed) throw QTypeError("closed question without a closed-answer loss");
    return *c.closed + c.causal;
  }
  if (!c.open) throw QTypeError("open question without an open-answer loss");
  return *c.open + c.causal;
}

template <typename T>
Var<T> nll_rows(Var<T> logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw ShapeError("nll: one target per row required");
  Matrix<T> pick = Matrix<T>::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= logits.cols()) throw RangeError("nll: target outside the output space");
    pick(static_cast<Eigen::Index>(i), targets[i]) = T(-1);
  }
  auto* g = logits.graph();
  return nn::sum_all(nn::mul(nn::log_softmax_rows(logits), g->constant(std::move(pick))));
}

template <typename T>
Var<T> kl_rows(Var<T> causal_logits, Var<T> original_logits, bool detach_original, T eps) {
  if (causal_logits.rows() != original_logits.rows() || causal_logits.cols() != original_logits.cols()) {
    throw ShapeError("kl: logit shapes differ");
  }
  auto p = nn::softmax_rows(causal_logits);
  auto q = nn::softmax_rows(detach_original ? nn::detach(original_logits) : original_logits);
  return nn::sum_all(nn::mul(p, nn::sub(nn::log_eps(p, eps), nn::log_eps(q, eps))));
}

template <typename T>
OpenDecoder<T> OpenDecoder<T>::create(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                                      Rng& rng) {
  OpenDecoder d;
  d.vocab = cfg.resolved_vocab();
  d.max_len = cfg.max_answer_len;
  auto normal = [&](const std::string& name, int rows, double sd) {
    Matrix<T> m(rows, cfg.dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * standard_normal(rng));
    return store.add(name, std::move(m), false);
  };
  d.embedding = normal(prefix + ".embed", d.vocab, 1.0);
  d.positions = normal(prefix + ".pos", d.max_len, 0.1);
  for (int b = 0; b < cfg.decoder_blocks; ++b) {
    d.blocks.push_back(nn::TransformerBlock<T>::create(store, prefix + ".block" + std::to_string(b), cfg.dim,
                                                       cfg.heads, cfg.ffn_hidden, rng));
  }
  d.norm = nn::LayerNorm<T>::create(store, prefix + ".ln", cfg.dim);
  d.out = nn::Linear<T>::create(store, prefix + ".out", cfg.dim, d.vocab, rng);
  d.segments = normal(prefix + ".segment", 3, 0.1);
  return d;
}

template <typename T>
Var<T> OpenDecoder<T>::operator()(Graph<T>& g, Var<T> prefix, const Offsets& prefix_offsets,
                                  std::span<const std::vector<int>> inputs, Offsets& input_offsets) const {
  const std::size_t batch = inputs.size();
  if (prefix_offsets.size() != batch + 1) throw ShapeError("decoder: prefix batch size mismatch");
  std::vector<int> ids, pos;
  input_offsets.assign(1, 0);
  for (const auto& seq : inputs) {
    if (seq.empty() || static_cast<int>(seq.size()) > max_len) throw LengthError("decoder input length outside [1, max_len]");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || seq[i] >= vocab) throw VocabError("decoder token outside the vocabulary");
      ids.push_back(seq[i]);
      pos.push_back(static_cast<int>(i));
    }
    input_offsets.push_back(static_cast<int>(ids.size()));
  }
  auto tokens = nn::add(nn::gather_rows<T>(g.param(embedding), ids), nn::gather_rows<T>(g.param(positions), pos));

  // Interleave per sample: prefix rows, then token rows.
  const int n_prefix = prefix_offsets.back();
  const Var<T> parts[] = {prefix, tokens};
  auto both = nn::concat_rows<T>(parts);
  std::vector<int> order;
  Offsets seq_offsets{0};
  std::vector<int> token_rows;
  for (std::size_t s = 0; s < batch; ++s) {
    for (int r = prefix_offsets[s]; r < prefix_offsets[s + 1]; ++r) order.push_back(r);
    for (int r = input_offsets[s]; r < input_offsets[s + 1]; ++r) {
      token_rows.push_back(static_cast<int>(order.size()));
      order.push_back(n_prefix + r);
    }
    seq_offsets.push_back(static_cast<int>(order.size()));
  }
  auto x = nn::gather_rows<T>(both, order);
  for (const auto& block : blocks) x = block(g, x, &seq_offsets, true);
  return out(g, norm(g, nn::gather_rows<T>(x, token_rows)));
}

std::pair<std::vector<int>, std::vector<int>> teacher_forcing(const std::vector<int>& answer, int max_len) {
  if (static_cast<int>(answer.size()) + 1 > max_len) {
    throw LengthError("answer of " + std::to_string(answer.size()) + " tokens exceeds decoder budget " +
                      std::to_string(max_len));
  }
  std::vector<int> in{data::Vocab::kBos}, target;
  in.insert(in.end(), answer.begin(), answer.end());
  target = answer;
  target.push_back(data::Vocab::kEos);
  return {in, target};
}

#define CVQA_INSTANTIATE(T)                                            \
  template Var<T> nll_rows<T>(Var<T>, std::span<const int>);           \
  template Var<T> kl_rows<T>(Var<T>, Var<T>, bool, T);                 \
  template struct OpenDecoder<T>;

CVQA_INSTANTIATE(float)
CVQA_INSTANTIATE(double)

}  // namespace cvqa::model
