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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cvqa/data/vocab.hpp"
#include "cvqa/errors.hpp"
#include "cvqa/model/model.hpp"
#include "cvqa/nn/functional.hpp"
#include "cvqa/nn/grad_check.hpp"

using namespace cvqa;
using namespace cvqa::model;
using data::Vocab;
using nn::GradCheckOptions;
using nn::GraphFn;
using Mat = nn::Matrix<double>;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.grid = 8;
  c.patch = 4;
  c.dim = 8;
  c.heads = 2;
  c.encoder_blocks = 2;
  c.decoder_blocks = 1;
  c.ffn_hidden = 8;
  c.head_hidden = 8;
  c.top_k = 2;
  c.global_stride = 2;
  c.max_text_len = 32;
  // Finite differences see through stop-gradients; those are tested apart.
  c.detach_original = false;
  c.detach_critic = false;
  return c;
}

Mat random_matrix(Rng& rng, int r, int c, double sd = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * standard_normal(rng);
  return m;
}

data::Image random_image(Rng& rng, int grid) {
  data::Image img(grid, grid);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(uniform01(rng));
  return img;
}

// Gives every zero-initialized weight a random value so that no branch is
// silent (trained-weights stand-in).
template <typename T>
void randomize_zeros(ParameterStore<T>& store, Rng& rng, double sd = 0.3) {
  for (auto& p : store) {
    if (p.value.isZero(0)) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(sd * standard_normal(rng));
    }
  }
}

struct Batch {
  std::vector<data::Image> images;
  std::vector<std::vector<int>> questions, prompts, answers;
  std::vector<Example> examples;

  Batch(Rng& rng, int grid, int n, bool with_open = true) {
    const auto& v = Vocab::builtin();
    const char* qs[] = {"does the image contain mass?", "where is the nodule located?", "is this a ct?",
                        "what disease is in the image?"};
    const char* as[] = {"yes", "left upper", "no", "nodule"};
    for (int i = 0; i < n; ++i) {
      const int k = with_open ? i % 4 : (i % 2) * 2;
      images.push_back(random_image(rng, grid));
      questions.push_back(v.encode(qs[k]));
      answers.push_back(v.encode(as[k]));
      prompts.push_back(v.encode(std::string("describe the following medical image in detail q1: ") + qs[(k + 1) % 4] +
                                 " a1: " + as[(k + 1) % 4] + " question: " + qs[k] + " a:"));
    }
    for (int i = 0; i < n; ++i) {
      const int k = with_open ? i % 4 : (i % 2) * 2;
      examples.push_back({&images[i], &questions[i], &prompts[i],
                          (k == 0 || k == 2) ? data::QType::kClosed : data::QType::kOpen, &answers[i]});
    }
  }
};

const Flags kBaseline{false, false, false};
const Flags kBypass{true, false, false};
const Flags kFull{true, true, false};

}  // namespace

// ---------------------------------------------------------------- encoders

TEST_CASE("image encoder tokens and patch embeddings") {
  Model<double> m(ModelConfig{}, 1);
  data::Image zero = data::Image::Zero(32, 32);
  const data::Image* imgs[] = {&zero};
  nn::Graph<double> g(&m.params(), false);
  auto pre = m.image_encoder.patch_embed(g, imgs);
  CHECK(pre.rows() == 64);
  for (Eigen::Index r = 1; r < 64; ++r) CHECK(pre.value().row(r) == pre.value().row(0));
  auto enc = m.image_encoder(g, imgs);
  CHECK(enc.rows() == 64);
  CHECK(enc.cols() == 64);
  // Variation across tokens of a blank image comes from positions only.
  CHECK((enc.value().rowwise() - enc.value().row(0)).norm() > 0.0);

  data::Image bad = data::Image::Zero(16, 16);
  const data::Image* bads[] = {&bad};
  CHECK_THROWS_AS(m.image_encoder(g, bads), ShapeError);
}

TEST_CASE("swapping two patches swaps their pre-position embeddings") {
  Model<double> m(ModelConfig{}, 2);
  Rng rng(3);
  data::Image a = random_image(rng, 32);
  data::Image b = a;
  b.block(0, 0, 4, 4) = a.block(12, 20, 4, 4);
  b.block(12, 20, 4, 4) = a.block(0, 0, 4, 4);
  nn::Graph<double> g(&m.params(), false);
  const data::Image* ia[] = {&a};
  const data::Image* ib[] = {&b};
  auto ea = m.image_encoder.patch_embed(g, ia).value();
  auto eb = m.image_encoder.patch_embed(g, ib).value();
  const int p = 3 * 8 + 5;
  CHECK((ea.row(0) - eb.row(p)).norm() == 0.0);
  CHECK((ea.row(p) - eb.row(0)).norm() == 0.0);
  for (int r = 1; r < 64; ++r) {
    if (r != p) CHECK((ea.row(r) - eb.row(r)).norm() == 0.0);
  }
}

TEST_CASE("text encoder shapes, determinism and vocabulary checks") {
  Model<double> m(ModelConfig{}, 4);
  nn::Graph<double> g(&m.params(), false);
  std::vector<int> one{Vocab::builtin().id("effusion")};
  std::vector<int> q = Vocab::builtin().encode("where is the mass located?");
  const std::vector<int>* seqs[] = {&one, &q, &q};
  Offsets off;
  auto f = m.text_encoder(g, seqs, off);
  CHECK(off == Offsets{0, 1, 6, 11});
  CHECK(f.rows() == 11);
  CHECK((f.value().middleRows(1, 5) - f.value().middleRows(6, 5)).cwiseAbs().maxCoeff() < 1e-12);
  nn::Graph<double> g2(&m.params(), false);
  Offsets off2;
  CHECK(m.text_encoder(g2, seqs, off2).value() == f.value());
  std::vector<int> bad{9999};
  const std::vector<int>* bads[] = {&bad};
  CHECK_THROWS_AS(m.text_encoder(g, bads, off), VocabError);
}

TEST_CASE("text encoder gradients match finite differences") {
  auto cfg = tiny();
  Model<double> m(cfg, 5);
  std::vector<int> q = Vocab::builtin().encode("is this a ct?");
  std::vector<int> r = Vocab::builtin().encode("which side is mass in the image?");
  GraphFn fn = [&](nn::Graph<double>& g, const std::vector<Var<double>>&) {
    const std::vector<int>* seqs[] = {&q, &r};
    Offsets off;
    return m.text_encoder(g, seqs, off);
  };
  auto rep = nn::grad_check(fn, {}, {}, &m.params());
  INFO(rep.worst << " abs " << rep.max_abs_error);
  CHECK(rep.entries > 100);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("global features: pooling and block") {
  Model<double> m(ModelConfig{}, 6);
  nn::Graph<double> g(&m.params(), false);
  Mat field = Mat::Constant(64, 64, 0.25);
  auto pooled = m.fmm_global.pool(g.constant(field), 64);
  CHECK(pooled.rows() == 16);
  CHECK((pooled.value().array() == 0.25).all());
  Rng rng(1);
  auto x = g.constant(random_matrix(rng, 64, 64));
  auto out = m.fmm_global(g, x, 1, 64);
  CHECK(out.rows() == 16);
  CHECK((out.value() - m.fmm_global.pool(x, 64).value()).norm() > 1e-3);
  CHECK_THROWS_AS(m.fmm_global.pool(g.constant(Mat::Zero(62, 4)), 62), ShapeError);
}

TEST_CASE("local token selection") {
  auto one_head = [](std::vector<double> cols) {
    Mat m(1, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = cols[i];
    return std::vector<Mat>{m};
  };
  CHECK(select_local_tokens<double>(one_head({0.1, 0.5, 0.3, 0.2}), 2) == std::vector<int>{1, 2});
  CHECK(select_local_tokens<double>(one_head({0.5, 0.5, 0.1}), 1) == std::vector<int>{0});
  auto all = select_local_tokens<double>(one_head({0.1, 0.5, 0.3, 0.2}), 4);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<int>{0, 1, 2, 3});
  CHECK_THROWS_AS(select_local_tokens<double>(one_head({0.1, 0.2}), 3), ShapeError);

  // Shift invariance of the pre-softmax logits, validity, no duplicates.
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<Mat> maps, shifted;
    for (int h = 0; h < 4; ++h) {
      Mat logits = random_matrix(rng, 10, 16, 2.0);
      Mat p(10, 16), q(10, 16);
      for (int r = 0; r < 10; ++r) {
        std::vector<double> row(logits.row(r).data(), logits.row(r).data() + 16), row2 = row;
        for (auto& x : row2) x += 3.7;
        auto a = nn::softmax(row), b = nn::softmax(row2);
        for (int c = 0; c < 16; ++c) p(r, c) = a[static_cast<std::size_t>(c)], q(r, c) = b[static_cast<std::size_t>(c)];
      }
      maps.push_back(p);
      shifted.push_back(q);
    }
    auto idx = select_local_tokens<double>(maps, 3);
    CHECK(idx == select_local_tokens<double>(shifted, 3));
    REQUIRE(idx.size() == 12);
    for (int h = 0; h < 4; ++h) {
      std::set<int> head(idx.begin() + 3 * h, idx.begin() + 3 * h + 3);
      CHECK(head.size() == 3);
      for (int i : head) CHECK((i >= 0 && i < 16));
    }
    auto dd = select_local_tokens<double>(maps, 3, true);
    CHECK(dd.size() == 12);
    CHECK(std::set<int>(dd.begin(), dd.end()).size() == 12);
  }
}

TEST_CASE("fmm_local gathers per-sample tokens") {
  Model<double> m(ModelConfig{}, 9);
  Rng rng(2);
  auto a = random_image(rng, 32), b = random_image(rng, 32);
  const data::Image* imgs[] = {&a, &b};
  nn::Graph<double> g(&m.params(), false);
  nn::AttentionMaps<double> maps;
  auto f_i = m.image_encoder(g, imgs, &maps);
  CHECK(maps.size() == 8);
  auto local = fmm_local(f_i, maps, 2, 64, 4, 8);
  CHECK(local.f_il.rows() == 64);
  CHECK(local.f_il.value().row(40) == f_i.value().row(64 + local.indices[1][8]));
  auto full = fmm_local(f_i, maps, 2, 64, 4, 64);
  CHECK(full.f_il.rows() == 512);
}

// ---------------------------------------------------------------- cif core

TEST_CASE("fuse with a single question token") {
  Model<double> m(ModelConfig{}, 10);
  Rng rng(1);
  nn::Graph<double> g(&m.params(), false);
  auto f_il = g.constant(random_matrix(rng, 32, 64));
  auto f_q = g.constant(random_matrix(rng, 1, 64));
  Offsets il{0, 32}, q{0, 1};
  auto f_iq = m.fusion(g, f_il, il, f_q, q);
  CHECK(f_iq.rows() == 32);
  auto projected = m.fusion.attn.wo(g, m.fusion.attn.wv(g, f_q));
  auto expected = m.fusion.mlp(g, nn::broadcast_rows(projected, 32));
  CHECK((f_iq.value() - expected.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse is invariant to question token order") {
  Model<double> m(ModelConfig{}, 11);
  Rng rng(2);
  nn::Graph<double> g(&m.params(), false);
  Mat q = random_matrix(rng, 5, 64);
  Mat q2 = q;
  q2.row(0).swap(q2.row(3));
  q2.row(1).swap(q2.row(4));
  auto f_il = g.constant(random_matrix(rng, 32, 64));
  Offsets il{0, 32}, qo{0, 5};
  auto a = m.fusion(g, f_il, il, g.constant(q), qo);
  auto b = m.fusion(g, f_il, il, g.constant(q2), qo);
  CHECK((a.value() - b.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mediator gate extremes") {
  Model<double> m(ModelConfig{}, 12);
  Rng rng(3);
  nn::Graph<double> g(&m.params(), false);
  Offsets il{0, 32}, ig{0, 16}, qo{0, 6};
  auto f_il = g.constant(random_matrix(rng, 32, 64));
  auto f_ig = g.constant(random_matrix(rng, 16, 64));
  auto f_q = g.constant(random_matrix(rng, 6, 64));
  auto f_iq = g.constant(random_matrix(rng, 32, 64));
  auto f_iq2 = g.constant(random_matrix(rng, 32, 64));
  auto zero = g.constant(Mat::Zero(1, 1));
  auto one = g.constant(Mat::Ones(1, 1));

  CHECK(m.mediator_visual(g, f_il, il, f_ig, ig, f_iq, zero).value() ==
        m.mediator_visual(g, f_il, il, f_ig, ig, f_iq2, zero).value());
  CHECK(m.mediator_textual(g, f_q, qo, f_iq, il, zero).value() == m.mediator_textual(g, f_q, qo, f_iq2, il, zero).value());
  CHECK(m.mediator_visual(g, f_il, il, f_ig, ig, f_iq, one).value() !=
        m.mediator_visual(g, f_il, il, f_ig, ig, f_iq2, one).value());

  // Zero-weighted global branch: only f_iq matters.
  auto& wo = m.params()[m.mediator_visual.global_attn.wo.weight];
  auto& bo = m.params()[m.mediator_visual.global_attn.wo.bias];
  wo.value.setZero();
  bo.value.setZero();
  auto f_ig2 = g.constant(random_matrix(rng, 16, 64));
  nn::Graph<double> g2(&m.params(), false);
  auto c1 = g2.constant(f_il.value()), c2 = g2.constant(f_iq.value());
  auto one2 = g2.constant(Mat::Ones(1, 1));
  CHECK(m.mediator_visual(g2, c1, il, g2.constant(f_ig.value()), ig, c2, one2).value() ==
        m.mediator_visual(g2, c1, il, g2.constant(f_ig2.value()), ig, c2, one2).value());
}

TEST_CASE("duplicate question tokens give identical mediator rows") {
  Model<double> m(ModelConfig{}, 13);
  Rng rng(4);
  nn::Graph<double> g(&m.params(), false);
  Mat q = random_matrix(rng, 4, 64);
  q.row(2) = q.row(0);
  auto out = m.mediator_textual(g, g.constant(q), Offsets{0, 4}, g.constant(random_matrix(rng, 32, 64)), Offsets{0, 32},
                                g.constant(Mat::Constant(1, 1, 0.6)));
  CHECK(out.rows() == 4);
  CHECK((out.value().row(0) - out.value().row(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("CIF blocks pass finite-difference checks") {
  auto cfg = tiny();
  Model<double> m(cfg, 14);
  Rng rng(5);
  randomize_zeros(m.params(), rng);
  const Offsets il{0, 4, 8}, ig{0, 2, 4}, qo{0, 3, 5}, io{0, 4, 8};
  GradCheckOptions opt;
  struct Case {
    std::string name;
    GraphFn fn;
    std::vector<Mat> inputs;
  };
  std::vector<Case> cases = {
      {"fuse", [&](auto& g, const auto& in) { return m.fusion(g, in[0], il, in[1], qo); },
       {random_matrix(rng, 8, 8), random_matrix(rng, 5, 8)}},
      {"mediator_visual", [&](auto& g, const auto& in) { return m.mediator_visual(g, in[0], il, in[1], ig, in[2], in[3]); },
       {random_matrix(rng, 8, 8), random_matrix(rng, 4, 8), random_matrix(rng, 8, 8), Mat::Constant(1, 1, 0.4)}},
      {"mediator_textual", [&](auto& g, const auto& in) { return m.mediator_textual(g, in[0], qo, in[1], il, in[2]); },
       {random_matrix(rng, 5, 8), random_matrix(rng, 8, 8), Mat::Constant(1, 1, 0.7)}},
      {"frontdoor", [&](auto& g, const auto& in) { return m.frontdoor_visual(g, in[0], io, in[1], il); },
       {random_matrix(rng, 8, 8), random_matrix(rng, 8, 8)}},
      {"gate", [&](auto& g, const auto& in) { return m.gate(g, in[0], in[1], std::nullopt).lambda; },
       {random_matrix(rng, 3, 8), random_matrix(rng, 3, 8)}},
      {"mi", [&](auto& g, const auto& in) { return m.gate.estimate(g, in[0], in[1]); },
       {random_matrix(rng, 3, 8), random_matrix(rng, 3, 8)}},
      {"head", [&](auto& g, const auto& in) { return m.head(g, in[0], in[1], in[2]); },
       {random_matrix(rng, 2, 8), random_matrix(rng, 2, 8), random_matrix(rng, 2, 8)}},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    auto rep = nn::grad_check(c.fn, c.inputs, opt, &m.params());
    INFO(rep.worst << " abs " << rep.max_abs_error);
    CHECK(rep.entries > 0);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("mutual-information gate") {
  Model<double> m(ModelConfig{}, 15);
  Rng rng(6);
  nn::Graph<double> g(&m.params(), false);
  Mat row = random_matrix(rng, 1, 64);
  Mat dup = row.replicate(8, 1);
  auto same = m.gate(g, g.constant(dup), g.constant(random_matrix(rng, 1, 64).replicate(8, 1)), std::nullopt);
  CHECK(std::abs(same.mi.scalar()) < 1e-12);
  for (int t = 0; t < 20; ++t) {
    auto out = m.gate(g, g.constant(random_matrix(rng, 8, 64, 3.0)), g.constant(random_matrix(rng, 8, 64, 3.0)), std::nullopt);
    CHECK(out.mi.scalar() <= std::log(8.0) + 1e-6);
    CHECK(out.lambda.scalar() > 0.0);
    CHECK(out.lambda.scalar() < 1.0);
  }
  CHECK_THROWS_AS(m.gate(g, g.constant(row), g.constant(row), std::nullopt), BatchTooSmall);
  auto last = m.gate(g, g.constant(row), g.constant(row), 0.5);
  CHECK(last.from_last);
  CHECK(last.lambda.scalar() == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
}

TEST_CASE("trained critic sees no information in shuffled pairs") {
  ModelConfig cfg = tiny();
  Model<double> m(cfg, 16);
  Rng rng(7);
  const int B = 16;
  auto pairs = [&](bool shuffle) {
    Mat x = random_matrix(rng, B, 8);
    Mat y = x + 0.3 * random_matrix(rng, B, 8);
    if (shuffle) {
      Mat z = y;
      for (int i = 0; i < B; ++i) y.row(i) = z.row((i + 5) % B);
    }
    return std::pair{x, y};
  };
  auto& critic = m.params()[m.gate.critic];
  for (int step = 0; step < 300; ++step) {
    auto [x, y] = pairs(false);
    critic.grad.setZero();
    nn::Graph<double> g(&m.params());
    auto mi = m.gate.estimate(g, g.constant(x), g.constant(y));
    g.backward(nn::scale(mi, -1.0));
    critic.value -= 0.05 * critic.grad;
  }
  nn::Graph<double> g(&m.params(), false);
  auto [x, y] = pairs(false);
  CHECK(m.gate.estimate(g, g.constant(x), g.constant(y)).scalar() > 0.5 * std::log(double(B)));
  double mean_shuffled = 0.0;
  for (int t = 0; t < 10; ++t) {
    auto [xs, ys] = pairs(true);
    mean_shuffled += m.gate.estimate(g, g.constant(xs), g.constant(ys)).scalar() / 10;
  }
  CHECK(mean_shuffled <= 0.1 * std::log(double(B)));
}

TEST_CASE("front-door adjustment starts as a normalization") {
  Model<double> m(ModelConfig{}, 17);
  Rng rng(8);
  nn::Graph<double> g(&m.params(), false);
  auto f = g.constant(random_matrix(rng, 64, 64));
  auto med = g.constant(random_matrix(rng, 32, 64));
  auto out = m.frontdoor_visual(g, f, Offsets{0, 64}, med, Offsets{0, 32});
  CHECK((out.value() - m.frontdoor_visual.norm(g, f).value()).cwiseAbs().maxCoeff() < 1e-12);

  randomize_zeros(m.params(), rng);
  auto single = g.constant(random_matrix(rng, 1, 64));
  auto one = m.frontdoor_visual(g, f, Offsets{0, 64}, single, Offsets{0, 1});
  const auto& fd = m.frontdoor_visual;
  auto expected = fd.norm(g, nn::add(f, nn::broadcast_rows(fd.attn.wo(g, fd.attn.wv(g, single)), 64)));
  CHECK((one.value() - expected.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("answer head: distribution, PM-off equivalence, shift invariance") {
  Model<double> m(ModelConfig{}, 18);
  Rng rng(9);
  nn::Graph<double> g(&m.params(), false);
  auto vis = g.constant(random_matrix(rng, 3, 64)), txt = g.constant(random_matrix(rng, 3, 64));
  auto absent = m.head(g, vis, txt, Var<double>());
  auto zeros = m.head(g, vis, txt, g.constant(Mat::Zero(3, 64)));
  CHECK(absent.value() == zeros.value());
  for (int r = 0; r < 3; ++r) {
    std::vector<double> row(absent.value().row(r).data(), absent.value().row(r).data() + 4), shifted = row;
    for (auto& x : shifted) x += 100.0;
    auto p = nn::softmax(row);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::max_element(p.begin(), p.end()) - p.begin() ==
          std::max_element(shifted.begin(), shifted.end()) - shifted.begin());
  }
}

// ---------------------------------------------------------------- forward

TEST_CASE("forward arms and call counters") {
  Model<float> m(ModelConfig{}, 19);
  Rng rng(10);
  Batch b(rng, 32, 4);
  nn::Graph<float> g(&m.params(), false);
  auto base = m.forward(g, b.examples, kBaseline);
  CHECK(m.counters().total() == 0);
  CHECK(!base.orig_logits.valid());
  CHECK(base.diag.cif_mass.empty());
  auto full = m.forward(g, b.examples, kFull);
  CHECK(m.counters().fuse == 1);
  CHECK(m.counters().frontdoor == 1);
  auto bypass = m.forward(g, b.examples, kBypass);
  CHECK(m.counters().frontdoor == 1);
  CHECK(m.counters().mediator_visual == 2);
  CHECK(full.logits.rows() == 4);
  CHECK(full.diag.selected[0].size() == 32);
  for (const auto& mass : full.diag.cif_mass) {
    CHECK(std::accumulate(mass.begin(), mass.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK_THROWS_AS(m.forward(g, b.examples, Flags{false, true, false}), FlagError);
}

TEST_CASE("forward outputs are valid distributions") {
  Model<float> m(ModelConfig{}, 20);
  Rng rng(11);
  randomize_zeros(m.params(), rng, 0.1);
  for (const auto& flags : {kBaseline, kBypass, kFull}) {
    for (int t = 0; t < 10; ++t) {
      Batch b(rng, 32, 8, false);
      auto preds = m.predict(b.examples, flags);
      for (const auto& p : preds) {
        REQUIRE(p.probs.size() == 4);
        double sum = 0.0;
        for (double x : p.probs) {
          CHECK(x >= 0.0);
          sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("bypass arm differs from the full arm once Y/H are non-trivial") {
  Model<double> m(ModelConfig{}, 21);
  Rng rng(12);
  randomize_zeros(m.params(), rng, 0.1);
  Batch b(rng, 32, 4);
  nn::Graph<double> g(&m.params(), false);
  auto full = m.forward(g, b.examples, kFull);
  auto bypass = m.forward(g, b.examples, kBypass);
  CHECK((full.logits.value() - bypass.logits.value()).norm() > 1e-6);
}

TEST_CASE("near-identity initialization of the front-door networks") {
  Model<double> m(ModelConfig{}, 22);
  Rng rng(13);
  Batch b(rng, 32, 8);
  nn::Graph<double> g(&m.params(), false);
  auto full = m.forward(g, b.examples, kFull);
  double worst = 0.0;
  for (int r = 0; r < 8; ++r) {
    std::vector<double> lp(full.logits.value().row(r).data(), full.logits.value().row(r).data() + 4);
    std::vector<double> lq(full.orig_logits.value().row(r).data(), full.orig_logits.value().row(r).data() + 4);
    worst = std::max(worst, loss_causal(nn::softmax(lp), nn::softmax(lq)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("zero gate silences the fused branches' gradients") {
  Model<double> m(ModelConfig{}, 23);
  Rng rng(14);
  nn::Graph<double> g(&m.params());
  Offsets il{0, 32}, ig{0, 16}, qo{0, 5};
  auto zero = g.constant(Mat::Zero(1, 1));
  auto f_iq = g.constant(random_matrix(rng, 32, 64));
  auto mi = m.mediator_visual(g, g.constant(random_matrix(rng, 32, 64)), il, g.constant(random_matrix(rng, 16, 64)), ig,
                              f_iq, zero);
  auto mq = m.mediator_textual(g, g.constant(random_matrix(rng, 5, 64)), qo, f_iq, il, zero);
  g.backward(nn::add(nn::sum_all(nn::mul(mi, mi)), nn::sum_all(nn::mul(mq, mq))));
  for (const auto& p : m.params()) {
    if (p.name.starts_with("mediator_v.fused.") || p.name.starts_with("mediator_q.cross.")) {
      INFO(p.name);
      CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
    }
    if (p.name == "mediator_v.global.q.weight") CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("prompt content cannot reach outputs without PM") {
  Model<double> m(ModelConfig{}, 24);
  Rng rng(15);
  randomize_zeros(m.params(), rng, 0.1);
  Batch b(rng, 32, 4);
  auto before = m.predict(b.examples, kFull);
  for (auto& p : b.prompts) p = Vocab::builtin().encode("q1: is this a ct? a1: yes question: is this an mri? a:");
  auto after = m.predict(b.examples, kFull);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].probs == after[i].probs);
    CHECK(before[i].tokens == after[i].tokens);
  }
  Flags pm = kFull;
  pm.use_pm = true;
  auto with_pm = m.predict(b.examples, pm);
  for (auto& p : b.prompts) p = Vocab::builtin().encode("q1: is this a ct? a1: no question: where is the mass located? a:");
  auto with_pm2 = m.predict(b.examples, pm);
  CHECK(with_pm[0].probs != with_pm2[0].probs);
}

TEST_CASE("end-to-end CIF gradient check on a two-sample batch") {
  auto cfg = tiny();
  Model<double> m(cfg, 25);
  Rng rng(16);
  randomize_zeros(m.params(), rng, 0.3);
  Batch b(rng, cfg.grid, 2);
  for (const auto& flags : {kFull, kBypass, Flags{true, true, true}}) {
    GraphFn fn = [&](nn::Graph<double>& g, const std::vector<Var<double>>&) { return m.loss(g, b.examples, flags); };
    auto rep = nn::grad_check(fn, {}, {}, &m.params());
    INFO(flags.arm_name() << " worst " << rep.worst << " abs " << rep.max_abs_error);
    CHECK(rep.entries > 1000);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

// ---------------------------------------------------------------- losses

TEST_CASE("closed loss values") {
  Mat certain(1, 4), uniform = Mat::Constant(1, 4, 0.25);
  certain << 0, 1, 0, 0;
  const int t1[] = {1};
  CHECK(loss_closed(certain, t1) == 0.0);
  CHECK(std::abs(loss_closed(uniform, t1) - std::log(4.0)) < 1e-9);
  Mat both(2, 4);
  both << certain, uniform;
  const int t2[] = {1, 3};
  CHECK(std::abs(loss_closed(both, t2) - std::log(4.0) / 2) < 1e-9);
  const int bad[] = {4};
  CHECK_THROWS_AS(loss_closed(uniform, bad), RangeError);

  // Against independent arithmetic on random batches.
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 8));
    Mat p(n, 4);
    std::vector<int> tg;
    long double ref = 0;
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += (p(r, c) = 0.01 + uniform01(rng));
      p.row(r) /= s;
      tg.push_back(static_cast<int>(uniform_index(rng, 4)));
      ref -= std::log(static_cast<long double>(p(r, tg.back())));
    }
    CHECK(std::abs(loss_closed(p, tg) - static_cast<double>(ref / n)) < 1e-9);
  }
}

TEST_CASE("causal loss values") {
  const double a[] = {1.0, 0.0}, b[] = {0.5, 0.5};
  CHECK(std::abs(loss_causal(a, b) - std::log(2.0)) < 1e-8);
  CHECK(loss_causal(b, b) == 0.0);
  Rng rng(18);
  for (int t = 0; t < 200; ++t) {
    double p[3], q[3], sp = 0, sq = 0;
    for (int i = 0; i < 3; ++i) sp += (p[i] = uniform01(rng) * (t % 3 != i)), sq += (q[i] = uniform01(rng));
    for (int i = 0; i < 3; ++i) p[i] /= sp, q[i] /= sq;
    CHECK(loss_causal(p, q) >= -1e-9);
  }
}

TEST_CASE("total loss composition") {
  CHECK(total_loss(data::QType::kClosed, {0.5, std::nullopt, 0.1}) == doctest::Approx(0.6));
  CHECK(total_loss(data::QType::kOpen, {std::nullopt, 1.5, 0.25}) == doctest::Approx(1.75));
  CHECK(total_loss(std::nullopt, {std::nullopt, 1.0, 0.0}) == 1.0);
  CHECK_THROWS_AS(total_loss(data::QType::kClosed, {std::nullopt, 1.0, 0.0}), QTypeError);

  Model<float> m(ModelConfig{}, 26);
  Rng rng(19);
  Batch b(rng, 32, 4);
  LossBreakdown br;
  nn::Graph<float> g(&m.params());
  m.loss(g, b.examples, kBaseline, &br);
  CHECK(br.causal == 0.0);
  CHECK(br.critic == 0.0);
  CHECK(br.n_closed == 2);
  CHECK(br.total == doctest::Approx((2 * br.closed + 2 * br.open) / 4).epsilon(1e-4));
}

TEST_CASE("consistency term does not reach the original branch") {
  Rng rng(20);
  GraphFn detached = [](nn::Graph<double>&, const std::vector<Var<double>>& in) { return kl_rows(in[0], in[1], true); };
  nn::Graph<double> g;
  auto p = g.input(random_matrix(rng, 3, 4)), q = g.input(random_matrix(rng, 3, 4));
  g.backward(kl_rows(p, q, true));
  CHECK(!g.has_grad(q.id()));
  CHECK(g.has_grad(p.id()));
  nn::Graph<double> g2;
  auto p2 = g2.input(p.value()), q2 = g2.input(q.value());
  g2.backward(kl_rows(p2, q2, false));
  CHECK(q2.grad().cwiseAbs().maxCoeff() > 1e-6);
  auto rep = nn::grad_check([](auto&, const auto& in) { return kl_rows(in[0], in[1], false); },
                            {p.value(), q.value()});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("open loss closed forms") {
  Model<double> m(ModelConfig{}, 27);
  Rng rng(21);
  Batch b(rng, 32, 2);
  // Example 1 is open with a two-token answer; use a one-token one instead.
  b.answers[1] = Vocab::builtin().encode("nodule");
  m.params()[m.decoder.out.weight].value.setZero();
  const std::vector<std::size_t> which{1};
  nn::Graph<double> g(&m.params(), false);
  auto f = m.forward(g, b.examples, kBaseline);
  auto uniform = m.open_loss(g, f, b.examples, kBaseline, which, nullptr);
  CHECK(std::abs(uniform.scalar() - 2.0 * std::log(static_cast<double>(m.config().resolved_vocab()))) < 1e-9);

  auto& bias = m.params()[m.decoder.out.bias].value;
  bias.setConstant(-1e4);
  bias(0, b.answers[1][0]) = 1e4;
  auto peaked = m.open_loss(g, f, b.examples, kBaseline, which, nullptr);
  // EOS cannot also be a point mass with one shared bias; check the first step.
  CHECK(peaked.scalar() > 0.0);
  Mat forced = Mat::Constant(2, 5, -1e4);
  forced(0, 2) = 1e4;
  forced(1, 4) = 1e4;
  const int tg[] = {2, 4};
  CHECK(nll_rows(g.constant(forced), std::span<const int>(tg)).scalar() == 0.0);

  std::vector<int> long_answer(6, Vocab::builtin().id("left"));
  CHECK_THROWS_AS(teacher_forcing(long_answer, 6), LengthError);
}

TEST_CASE("prompt conditioning changes the open loss") {
  Model<double> m(ModelConfig{}, 28);
  Rng rng(22);
  randomize_zeros(m.params(), rng, 0.1);
  Batch b(rng, 32, 4);
  Flags pm = kFull;
  pm.use_pm = true;
  const std::vector<std::size_t> which{1, 3};
  nn::Graph<double> g(&m.params(), false);
  auto with = m.open_loss(g, m.forward(g, b.examples, pm), b.examples, pm, which, nullptr).scalar();
  auto without = m.open_loss(g, m.forward(g, b.examples, kFull), b.examples, kFull, which, nullptr).scalar();
  CHECK(std::abs(with - without) > 1e-6);
}

TEST_CASE("prompt prefix modes") {
  Rng rng(24);
  Batch b(rng, 32, 4);
  Flags pm = kFull;
  pm.use_pm = true;
  const std::vector<std::size_t> which{1, 3};
  for (const char* mode : {"tokens", "pooled", "pairs"}) {
    CAPTURE(mode);
    ModelConfig c;
    c.prompt_prefix = mode;
    Model<double> m(c, 28);
    Rng init(22);
    randomize_zeros(m.params(), init, 0.1);
    nn::Graph<double> g(&m.params(), false);
    auto f = m.forward(g, b.examples, pm);
    Offsets off;
    m.decoder_prefix(f.vis, f.txt, f, which, pm, off);
    // Prompt layout: instructions | q1 a1 | question a.
    const std::string name = mode;
    const int extra = name == "tokens" ? static_cast<int>(b.prompts[1].size()) : (name == "pooled" ? 1 : 3);
    CHECK(off[1] - off[0] == 2 + extra);
    const double with = m.open_loss(g, f, b.examples, pm, which, nullptr).scalar();
    const double without = m.open_loss(g, m.forward(g, b.examples, kFull), b.examples, kFull, which, nullptr).scalar();
    CHECK(std::isfinite(with));
    CHECK(std::abs(with - without) > 1e-6);
  }
  ModelConfig bad;
  bad.prompt_prefix = "rows";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pairs prefix pools each prompt segment") {
  ModelConfig c;
  c.prompt_prefix = "pairs";
  Model<double> m(c, 31);
  Rng rng(25);
  Batch b(rng, 32, 2);
  Flags pm = kFull;
  pm.use_pm = true;
  nn::Graph<double> g(&m.params(), false);
  auto f = m.forward(g, b.examples, pm);
  REQUIRE(f.prompt_segment_offsets.size() == 3);
  const auto& v = Vocab::builtin();
  const auto& ids = b.prompts[0];
  const auto q1 = std::find(ids.begin(), ids.end(), v.id("q1:")) - ids.begin();
  // First segment is the mean of the instruction tokens.
  nn::Matrix<double> want = f.prompt_tokens.value().topRows(q1).colwise().mean();
  CHECK((f.prompt_segments.value().row(0) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("greedy decoding") {
  Model<float> m(ModelConfig{}, 29);
  Rng rng(23);
  Batch b(rng, 32, 4);
  auto first = m.predict(b.examples, kFull);
  auto second = m.predict(b.examples, kFull);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i].tokens == second[i].tokens);
  for (const auto& p : first) CHECK(p.tokens.size() <= 5);
  m.params()[m.decoder.out.bias].value(0, Vocab::kEos) = 1e3f;
  for (const auto& p : m.predict(b.examples, kFull)) {
    if (p.qtype == data::QType::kOpen) CHECK(p.tokens.empty());
  }
}

TEST_CASE("encoder freezing marks parameters") {
  Model<float> m(ModelConfig{}, 30);
  m.freeze_encoders(true);
  for (const auto& p : m.params()) {
    const bool enc = p.name.starts_with("image_enc.") || p.name.starts_with("text_enc.");
    CHECK(p.trainable == !enc);
  }
}
