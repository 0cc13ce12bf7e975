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

#include "cvqa/model/model.hpp"

#include <algorithm>

#include "cvqa/data/vocab.hpp"
#include "cvqa/errors.hpp"
#include "cvqa/nn/functional.hpp"

namespace cvqa::model {

namespace {

template <typename T>
std::vector<double> received_mass(std::span<const Matrix<T>> head_maps) {
  Eigen::Matrix<double, 1, Eigen::Dynamic> acc = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(head_maps[0].cols());
  for (const auto& m : head_maps) acc += m.template cast<double>().colwise().mean();
  acc /= static_cast<double>(head_maps.size());
  return {acc.data(), acc.data() + acc.size()};
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto rng = make_rng(seed, "model-init");
  image_encoder = ImageEncoder<T>::create(params_, "image_enc", config_, rng);
  text_encoder = TextEncoder<T>::create(params_, "text_enc", config_, rng);
  fmm_global = FmmGlobal<T>::create(params_, "fmm_global", config_, rng);
  fusion = Fusion<T>::create(params_, "fuse", config_, rng);
  mediator_visual = MediatorVisual<T>::create(params_, "mediator_v", config_, rng);
  mediator_textual = MediatorTextual<T>::create(params_, "mediator_q", config_, rng);
  gate = MiGate<T>::create(params_, "gate", config_, rng);
  frontdoor_visual = FrontDoor<T>::create(params_, "frontdoor_v", config_, rng);
  frontdoor_textual = FrontDoor<T>::create(params_, "frontdoor_q", config_, rng);
  head = AnswerHead<T>::create(params_, "head", config_, rng);
  decoder = OpenDecoder<T>::create(params_, "decoder", config_, rng);
}

template <typename T>
void Model<T>::freeze_encoders(bool frozen) {
  params_.set_trainable("image_enc.", !frozen);
  params_.set_trainable("text_enc.", !frozen);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Graph<T>& g, std::span<const Example> batch, const Flags& flags) {
  flags.validate();
  if (batch.empty()) throw ShapeError("empty batch");
  const int n = static_cast<int>(batch.size());
  const int tokens = config_.tokens();
  const int heads = config_.heads;
  std::vector<const data::Image*> images;
  std::vector<const std::vector<int>*> questions, prompts;
  for (const auto& ex : batch) {
    if (ex.question == nullptr) throw ShapeError("example without a question");
    images.push_back(ex.image);
    questions.push_back(ex.question);
    if (flags.use_pm) {
      if (ex.prompt == nullptr) throw ShapeError("use_pm set but example has no prompt");
      prompts.push_back(ex.prompt);
    }
  }

  ForwardResult<T> r;
  AttentionMaps<T> enc_maps;
  auto f_i = image_encoder(g, images, &enc_maps);
  Offsets q_off;
  auto f_q = text_encoder(g, questions, q_off);
  const auto img_off = nn::uniform_offsets(n, tokens);
  r.vis_orig = nn::segment_mean(f_i, img_off);
  r.txt_orig = nn::segment_mean(f_q, q_off);
  for (int s = 0; s < n; ++s) {
    r.diag.encoder_mass.push_back(
        received_mass<T>({enc_maps.data() + static_cast<std::size_t>(s * heads), static_cast<std::size_t>(heads)}));
  }
  if (flags.use_pm) {
    r.prompt_tokens = text_encoder(g, prompts, r.prompt_offsets);
    r.prompt_pool = nn::segment_mean(r.prompt_tokens, r.prompt_offsets);
    if (config_.prompt_prefix == "pairs") {
      const auto& v = data::Vocab::builtin();
      const int markers[] = {v.id("q1:"), v.id("q2:"), v.id("q3:"), v.id("question:")};
      Offsets bounds{0};
      r.prompt_segment_offsets.assign(1, 0);
      for (int s = 0; s < n; ++s) {
        const auto& ids = *prompts[static_cast<std::size_t>(s)];
        const int base = r.prompt_offsets[static_cast<std::size_t>(s)];
        for (std::size_t i = 1; i < ids.size(); ++i) {
          if (std::find(std::begin(markers), std::end(markers), ids[i]) != std::end(markers)) {
            bounds.push_back(base + static_cast<int>(i));
          }
        }
        bounds.push_back(r.prompt_offsets[static_cast<std::size_t>(s) + 1]);
        r.prompt_segment_offsets.push_back(static_cast<int>(bounds.size()) - 1);
      }
      r.prompt_segments = nn::segment_mean(r.prompt_tokens, bounds);
    }
  }

  if (!flags.use_cif) {
    r.vis = r.vis_orig;
    r.txt = r.txt_orig;
    r.logits = head(g, r.vis, r.txt, r.prompt_pool);
    return r;
  }

  auto local = fmm_local(f_i, enc_maps, n, tokens, heads, config_.top_k, config_.dedup);
  r.diag.selected = local.indices;
  const int L = config_.local_tokens();
  const auto il_off = nn::uniform_offsets(n, L);
  const auto ig_off = nn::uniform_offsets(n, tokens / config_.global_stride);
  auto f_ig = fmm_global(g, f_i, n, tokens);

  ++counters_.mi_gate;
  auto gate_out = gate(g, r.vis_orig, r.txt_orig, last_mi_);
  r.mi = gate_out.mi;
  r.lambda = gate_out.lambda;
  r.diag.mi = static_cast<double>(r.mi.scalar());
  r.diag.lambda = static_cast<double>(r.lambda.scalar());
  r.diag.gate_from_last = gate_out.from_last;
  if (!gate_out.from_last) last_mi_ = r.diag.mi;

  ++counters_.fuse;
  auto f_iq = fusion(g, local.f_il, il_off, f_q, q_off);
  ++counters_.mediator_visual;
  auto m_i = mediator_visual(g, local.f_il, il_off, f_ig, ig_off, f_iq, r.lambda);
  ++counters_.mediator_textual;
  auto m_q = mediator_textual(g, f_q, q_off, f_iq, il_off, r.lambda);

  if (flags.use_fda) {
    ++counters_.frontdoor;
    AttentionMaps<T> y_maps;
    auto f_ip = frontdoor_visual(g, f_i, img_off, m_i, il_off, &y_maps);
    auto f_qp = frontdoor_textual(g, f_q, q_off, m_q, q_off);
    r.vis = nn::segment_mean(f_ip, img_off);
    r.txt = nn::segment_mean(f_qp, q_off);
    for (int s = 0; s < n; ++s) {
      auto over_mediators =
          received_mass<T>({y_maps.data() + static_cast<std::size_t>(s * heads), static_cast<std::size_t>(heads)});
      std::vector<double> mass(static_cast<std::size_t>(tokens), 0.0);
      for (std::size_t j = 0; j < over_mediators.size(); ++j) {
        mass[static_cast<std::size_t>(local.indices[static_cast<std::size_t>(s)][j])] += over_mediators[j];
      }
      r.diag.cif_mass.push_back(std::move(mass));
    }
  } else {
    r.vis = nn::segment_mean(m_i, il_off);
    r.txt = nn::segment_mean(m_q, q_off);
  }
  r.logits = head(g, r.vis, r.txt, r.prompt_pool);
  r.orig_logits = head(g, r.vis_orig, r.txt_orig, config_.original_sees_prompt ? r.prompt_pool : Var<T>{});
  return r;
}

template <typename T>
Var<T> Model<T>::decoder_prefix(Var<T> vis, Var<T> txt, const ForwardResult<T>& f,
                                const std::vector<std::size_t>& which, const Flags& flags, Offsets& offsets) const {
  const int n = static_cast<int>(vis.rows());
  auto& g = *vis.graph();
  auto seg = g.param(decoder.segments);
  std::vector<Var<T>> parts{nn::add_row(vis, nn::slice_rows(seg, 0, 1)), nn::add_row(txt, nn::slice_rows(seg, 1, 1))};
  const bool pooled = config_.prompt_prefix == "pooled";
  const bool pairs = config_.prompt_prefix == "pairs";
  if (flags.use_pm) {
    auto rows = pooled ? f.prompt_pool : (pairs ? f.prompt_segments : f.prompt_tokens);
    parts.push_back(nn::add_row(rows, nn::slice_rows(seg, 2, 1)));
  }
  auto all = nn::concat_rows<T>(parts);
  std::vector<int> rows;
  offsets.assign(1, 0);
  for (std::size_t s : which) {
    rows.push_back(static_cast<int>(s));
    rows.push_back(n + static_cast<int>(s));
    if (flags.use_pm && pooled) {
      rows.push_back(2 * n + static_cast<int>(s));
    } else if (flags.use_pm && pairs) {
      for (int r = f.prompt_segment_offsets[s]; r < f.prompt_segment_offsets[s + 1]; ++r) rows.push_back(2 * n + r);
    } else if (flags.use_pm) {
      for (int r = f.prompt_offsets[s]; r < f.prompt_offsets[s + 1]; ++r) rows.push_back(2 * n + r);
    }
    offsets.push_back(static_cast<int>(rows.size()));
  }
  return nn::gather_rows<T>(all, rows);
}

template <typename T>
Var<T> Model<T>::open_loss(Graph<T>& g, const ForwardResult<T>& f, std::span<const Example> batch, const Flags& flags,
                           const std::vector<std::size_t>& which, Var<T>* causal_kl) {
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  for (std::size_t s : which) {
    if (batch[s].answer == nullptr || batch[s].answer->empty()) throw LengthError("open example without an answer");
    auto [in, target] = teacher_forcing(*batch[s].answer, config_.max_answer_len);
    inputs.push_back(std::move(in));
    targets.insert(targets.end(), target.begin(), target.end());
  }
  Offsets p_off, i_off;
  auto prefix = decoder_prefix(f.vis, f.txt, f, which, flags, p_off);
  auto logits = decoder(g, prefix, p_off, inputs, i_off);
  auto nll = nll_rows<T>(logits, targets);
  if (causal_kl != nullptr && flags.use_cif) {
    Offsets po_off, io_off;
    Flags orig_flags = flags;
    orig_flags.use_pm = flags.use_pm && config_.original_sees_prompt;
    auto prefix_o = decoder_prefix(f.vis_orig, f.txt_orig, f, which, orig_flags, po_off);
    auto logits_o = decoder(g, prefix_o, po_off, inputs, io_off);
    *causal_kl = kl_rows<T>(logits, logits_o, config_.detach_original);
  }
  return nll;
}

template <typename T>
Var<T> Model<T>::loss(Graph<T>& g, std::span<const Example> batch, const Flags& flags, LossBreakdown* breakdown) {
  auto f = forward(g, batch, flags);
  std::vector<std::size_t> closed, open;
  std::vector<int> closed_rows, targets;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].qtype == data::QType::kClosed) {
      const int t = batch[s].answer ? closed_index(*batch[s].answer) : -1;
      if (t < 0) throw QTypeError("closed example whose answer is not a closed answer");
      closed.push_back(s);
      closed_rows.push_back(static_cast<int>(s));
      targets.push_back(t);
    } else {
      open.push_back(s);
    }
  }
  const T inv_n = T(1) / static_cast<T>(batch.size());
  std::vector<Var<T>> terms;
  LossBreakdown b;
  b.n_closed = static_cast<int>(closed.size());
  b.n_open = static_cast<int>(open.size());
  Var<T> kl_sum;
  if (!closed.empty()) {
    auto lc = nll_rows<T>(nn::gather_rows<T>(f.logits, closed_rows), targets);
    terms.push_back(lc);
    b.closed = static_cast<double>(lc.scalar()) / b.n_closed;
    if (flags.use_cif) {
      kl_sum = kl_rows<T>(nn::gather_rows<T>(f.logits, closed_rows), nn::gather_rows<T>(f.orig_logits, closed_rows),
                          config_.detach_original);
    }
  }
  if (!open.empty()) {
    Var<T> kl_open;
    auto lo = open_loss(g, f, batch, flags, open, flags.use_cif ? &kl_open : nullptr);
    terms.push_back(lo);
    b.open = static_cast<double>(lo.scalar()) / b.n_open;
    if (kl_open.valid()) kl_sum = kl_sum.valid() ? nn::add(kl_sum, kl_open) : kl_open;
  }
  if (kl_sum.valid()) {
    terms.push_back(kl_sum);
    b.causal = static_cast<double>(kl_sum.scalar()) * static_cast<double>(inv_n);
  }
  Var<T> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  total = nn::scale(total, inv_n);
  if (flags.use_cif) {
    b.lambda = static_cast<double>(f.lambda.scalar());
    if (!f.diag.gate_from_last) {
      total = nn::sub(total, f.mi);
      b.critic = -static_cast<double>(f.mi.scalar());
    }
  }
  b.total = static_cast<double>(total.scalar());
  if (breakdown != nullptr) *breakdown = b;
  return total;
}

template <typename T>
std::vector<std::vector<int>> Model<T>::decode_open(Graph<T>& g, const ForwardResult<T>& f, const Flags& flags,
                                                    const std::vector<std::size_t>& which, int max_len) {
  max_len = std::min(max_len, config_.max_answer_len - 1);
  std::vector<std::vector<int>> seqs(which.size(), std::vector<int>{data::Vocab::kBos});
  std::vector<bool> done(which.size(), which.empty());
  if (which.empty()) return {};
  Offsets p_off;
  auto prefix = decoder_prefix(f.vis, f.txt, f, which, flags, p_off);
  for (int step = 0; step < max_len; ++step) {
    Offsets i_off;
    auto logits = decoder(g, prefix, p_off, seqs, i_off);
    bool all_done = true;
    for (std::size_t s = 0; s < which.size(); ++s) {
      if (done[s]) continue;
      Eigen::Index best = 0;
      logits.value().row(i_off[s + 1] - 1).maxCoeff(&best);
      if (best == data::Vocab::kEos) {
        done[s] = true;
      } else {
        seqs[s].push_back(static_cast<int>(best));
        all_done = false;
      }
    }
    if (all_done) break;
  }
  for (auto& s : seqs) s.erase(s.begin());
  return seqs;
}

template <typename T>
std::vector<Prediction> Model<T>::predict(std::span<const Example> batch, const Flags& flags, Diagnostics* diag) {
  Graph<T> g(&params_, false);
  auto f = forward(g, batch, flags);
  std::vector<Prediction> out(batch.size());
  std::vector<std::size_t> open;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    out[s].qtype = batch[s].qtype;
    if (batch[s].qtype == data::QType::kClosed) {
      const Eigen::RowVectorXd row = f.logits.value().row(static_cast<Eigen::Index>(s)).template cast<double>();
      out[s].probs = nn::softmax(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      int best = 0;
      for (int k = 1; k < kNumClosed; ++k) {
        if (out[s].probs[static_cast<std::size_t>(k)] > out[s].probs[static_cast<std::size_t>(best)]) best = k;
      }
      out[s].tokens = {closed_token(best)};
    } else {
      open.push_back(s);
    }
  }
  auto decoded = decode_open(g, f, flags, open, config_.max_answer_len - 1);
  for (std::size_t j = 0; j < open.size(); ++j) out[open[j]].tokens = std::move(decoded[j]);
  if (diag != nullptr) *diag = std::move(f.diag);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace cvqa::model
