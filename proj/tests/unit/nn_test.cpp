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

#include <cmath>
#include <filesystem>

#include "cvqa/errors.hpp"
#include "cvqa/nn/checkpoint.hpp"
#include "cvqa/nn/functional.hpp"
#include "cvqa/nn/grad_check.hpp"
#include "cvqa/nn/op_suite.hpp"
#include "cvqa/nn/layers.hpp"

using namespace cvqa;
using namespace cvqa::nn;

namespace {

using Mat = Matrix<double>;

Mat random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Gives every zero-initialised bias and norm parameter a random value so the
// checks exercise all terms.
void perturb(ParameterStore<double>& store, Rng& rng, double scale = 0.3) {
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += scale * standard_normal(rng);
  }
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  const std::vector<double> x{0.0, 0.0};
  auto p = softmax(x);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax of 1,2,3") {
  // Reference values from exp(x_i) / sum exp(x_j) in long double.
  const std::vector<double> x{1.0, 2.0, 3.0};
  long double z = 0;
  for (double v : x) z += std::exp(static_cast<long double>(v));
  auto p = softmax(x);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p[i] == doctest::Approx(static_cast<double>(std::exp(static_cast<long double>(x[i])) / z)).epsilon(1e-14));
  }
  CHECK(p[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(0.6652).epsilon(1e-3));
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant and rejects non-finite input") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(7), y(7);
    const double c = 100.0 * (uniform01(rng) - 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = 5.0 * standard_normal(rng);
      y[i] = x[i] + c;
    }
    auto px = softmax(x), py = softmax(y);
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(px[i] - py[i]) < 1e-7);
      CHECK(px[i] > 0.0);
      sum += px[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-7);
  }
  const std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS(softmax(bad), NonFiniteError);
  const std::vector<double> inf{1.0, INFINITY};
  CHECK_THROWS_AS(softmax(inf), NonFiniteError);
}

TEST_CASE("grad_check on a quadratic form") {
  Rng rng(1);
  auto r = grad_check([](Graph<double>&, const std::vector<Var<double>>& in) { return sum_all(mul(in[0], in[0])); },
                      {random_matrix(rng, 3, 4)});
  CHECK(r.entries == 12);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check on softmax cross-entropy") {
  Rng rng(2);
  Mat onehot = Mat::Zero(3, 5);
  onehot(0, 1) = onehot(1, 4) = onehot(2, 0) = 1.0;
  auto ce = [onehot](Graph<double>& g, const std::vector<Var<double>>& in) {
    return scale(sum_all(mul(log_softmax_rows(in[0]), g.constant(onehot))), -1.0 / 3.0);
  };
  auto r = grad_check(ce, {random_matrix(rng, 3, 5, 2.0)});
  CHECK(r.max_rel_error < 1e-5);

  GradCheckOptions corrupt;
  corrupt.analytic_scale = 1.1;
  CHECK(grad_check(ce, {random_matrix(rng, 3, 5, 2.0)}, corrupt).max_rel_error > 1e-2);
  corrupt.eps = 1e-2;
  CHECK_THROWS_AS(grad_check(ce, {random_matrix(rng, 3, 5)}, corrupt), RangeError);
}

TEST_CASE("every graph op passes a finite-difference check") {
  Rng rng(11);
  struct Case {
    const char* name;
    GraphFn fn;
    std::vector<Mat> inputs;
  };
  const Offsets seg{0, 2, 5};
  const Offsets kseg{0, 3, 4};
  std::vector<int> rows{2, 0, 2, 1};
  std::vector<Case> cases = {
      {"matmul", [](auto&, const auto& in) { return matmul(in[0], in[1]); }, {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)}},
      {"matmul_nt", [](auto&, const auto& in) { return matmul_nt(in[0], in[1]); }, {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)}},
      {"linear", [](auto&, const auto& in) { return linear(in[0], in[1], in[2]); },
       {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2), random_matrix(rng, 1, 2)}},
      {"add", [](auto&, const auto& in) { return add(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"sub", [](auto&, const auto& in) { return sub(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"mul", [](auto&, const auto& in) { return mul(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"scale", [](auto&, const auto& in) { return scale(in[0], 0.7); }, {random_matrix(rng, 2, 3)}},
      {"add_scalar", [](auto&, const auto& in) { return add_scalar(in[0], 0.7); }, {random_matrix(rng, 2, 3)}},
      {"add_row", [](auto&, const auto& in) { return add_row(in[0], in[1]); }, {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)}},
      {"scale_by", [](auto&, const auto& in) { return scale_by(in[0], in[1]); }, {random_matrix(rng, 4, 3), random_matrix(rng, 1, 1)}},
      {"layer_norm", [](auto&, const auto& in) { return layer_norm(in[0], in[1], in[2]); },
       {random_matrix(rng, 4, 6), random_matrix(rng, 1, 6), random_matrix(rng, 1, 6)}},
      {"gelu", [](auto&, const auto& in) { return gelu(in[0]); }, {random_matrix(rng, 4, 5, 2.0)}},
      {"sigmoid", [](auto&, const auto& in) { return sigmoid(in[0]); }, {random_matrix(rng, 4, 5, 2.0)}},
      {"log_eps", [](auto&, const auto& in) { return log_eps(softmax_rows(in[0]), 1e-9); }, {random_matrix(rng, 3, 4)}},
      {"softmax_rows", [](auto&, const auto& in) { return softmax_rows(in[0]); }, {random_matrix(rng, 3, 5, 2.0)}},
      {"log_softmax_rows", [](auto&, const auto& in) { return log_softmax_rows(in[0]); }, {random_matrix(rng, 3, 5, 2.0)}},
      {"mean_rows", [](auto&, const auto& in) { return mean_rows(in[0]); }, {random_matrix(rng, 4, 3)}},
      {"broadcast_rows", [](auto&, const auto& in) { return broadcast_rows(in[0], 3); }, {random_matrix(rng, 1, 3)}},
      {"pool_rows", [](auto&, const auto& in) { return pool_rows(in[0], 2); }, {random_matrix(rng, 6, 3)}},
      {"concat_cols",
       [](auto&, const auto& in) {
         std::vector<Var<double>> parts{in[0], in[1]};
         return concat_cols<double>(parts);
       },
       {random_matrix(rng, 3, 2), random_matrix(rng, 3, 4)}},
      {"concat_rows",
       [](auto&, const auto& in) {
         std::vector<Var<double>> parts{in[0], in[1]};
         return concat_rows<double>(parts);
       },
       {random_matrix(rng, 2, 3), random_matrix(rng, 1, 3)}},
      {"gather_rows", [rows](auto&, const auto& in) { return gather_rows<double>(in[0], rows); }, {random_matrix(rng, 3, 4)}},
      {"slice_rows", [](auto&, const auto& in) { return slice_rows(in[0], 1, 2); }, {random_matrix(rng, 4, 3)}},
      {"sum_all", [](auto&, const auto& in) { return sum_all(in[0]); }, {random_matrix(rng, 4, 3)}},
      {"element", [](auto&, const auto& in) { return element(in[0], 2, 1); }, {random_matrix(rng, 4, 3)}},
      {"diagonal", [](auto&, const auto& in) { return diagonal(in[0]); }, {random_matrix(rng, 4, 4)}},
      {"segment_mean", [seg](auto&, const auto& in) { return segment_mean(in[0], seg); }, {random_matrix(rng, 5, 3)}},
      {"segment_broadcast", [seg](auto&, const auto& in) { return segment_broadcast(in[0], seg); }, {random_matrix(rng, 2, 3)}},
      {"attention", [](auto&, const auto& in) { return attention(in[0], in[1], in[2], 2); },
       {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4), random_matrix(rng, 5, 4)}},
      {"attention_causal", [](auto&, const auto& in) { return attention(in[0], in[1], in[2], 2, true); },
       {random_matrix(rng, 4, 4), random_matrix(rng, 4, 4), random_matrix(rng, 4, 4)}},
      {"attention_segments",
       [seg, kseg](auto&, const auto& in) { return attention<double>(in[0], in[1], in[2], 2, false, nullptr, &seg, &kseg); },
       {random_matrix(rng, 5, 4), random_matrix(rng, 4, 4), random_matrix(rng, 4, 4)}},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    auto r = grad_check(c.fn, c.inputs);
    CHECK(r.entries > 0);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("detach blocks gradient") {
  Graph<double> g;
  auto x = g.input(Mat::Constant(2, 2, 3.0));
  auto y = add(mul(x, x), detach(mul(x, x)));
  g.backward(sum_all(y));
  CHECK(x.grad().isApprox(Mat::Constant(2, 2, 6.0)));
}

TEST_CASE("mha with a single key/value token") {
  Rng rng(5);
  ParameterStore<double> store;
  auto layer = MultiHeadAttention<double>::create(store, "a", 8, 2, rng);
  perturb(store, rng);
  Graph<double> g(&store, false);
  auto q = g.constant(random_matrix(rng, 3, 8));
  auto kv = g.constant(random_matrix(rng, 1, 8));
  auto r = mha(g, layer, q, kv, kv);
  REQUIRE(r.attn.size() == 2);
  for (const auto& m : r.attn) CHECK(m.isApprox(Mat::Ones(3, 1)));
  Mat v = kv.value() * store[layer.wv.weight].value + store[layer.wv.bias].value;
  Mat expect = v * store[layer.wo.weight].value + store[layer.wo.bias].value;
  for (Eigen::Index i = 0; i < 3; ++i) CHECK((r.output.value().row(i) - expect).norm() < 1e-12);
}

TEST_CASE("mha with identity projections averages values of identical keys") {
  ParameterStore<double> store;
  Rng rng(6);
  auto layer = MultiHeadAttention<double>::create(store, "a", 4, 2, rng);
  for (auto& p : store) {
    if (p.name.ends_with(".weight")) p.value = Mat::Identity(4, 4);
  }
  Graph<double> g(&store, false);
  Mat keys(2, 4);
  keys << 1, 2, 3, 4, 1, 2, 3, 4;
  Mat values(2, 4);
  values << 1, 0, 2, 0, 3, 4, 0, 6;
  auto r = mha(g, layer, g.constant(random_matrix(rng, 3, 4)), g.constant(keys), g.constant(values));
  Mat avg = values.colwise().mean();
  for (Eigen::Index i = 0; i < 3; ++i) CHECK((r.output.value().row(i) - avg).norm() < 1e-12);
}

TEST_CASE("mha gradients match finite differences") {
  Rng rng(7);
  ParameterStore<double> store;
  auto layer = MultiHeadAttention<double>::create(store, "a", 6, 2, rng);
  perturb(store, rng);
  auto fn = [&](Graph<double>& g, const std::vector<Var<double>>& in) { return mha(g, layer, in[0], in[1], in[1]).output; };
  auto r = grad_check(fn, {random_matrix(rng, 4, 6), random_matrix(rng, 4, 6)}, {}, &store);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("attention maps are row stochastic and respect the causal mask") {
  Rng rng(8);
  Graph<double> g;
  AttentionMaps<double> maps;
  auto q = g.constant(random_matrix(rng, 5, 8, 3.0));
  auto k = g.constant(random_matrix(rng, 5, 8, 3.0));
  attention(q, k, k, 4, true, &maps);
  REQUIRE(maps.size() == 4);
  for (const auto& m : maps) {
    for (Eigen::Index r = 0; r < 5; ++r) {
      CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-12);
      CHECK(m.row(r).minCoeff() >= 0.0);
      for (Eigen::Index c = r + 1; c < 5; ++c) CHECK(m(r, c) == 0.0);
    }
  }
}

TEST_CASE("segmented attention equals per-sequence attention") {
  Rng rng(9);
  Mat q = random_matrix(rng, 5, 4), k = random_matrix(rng, 6, 4), v = random_matrix(rng, 6, 4);
  const Offsets qo{0, 2, 5}, ko{0, 4, 6};
  Graph<double> g;
  AttentionMaps<double> maps;
  auto joint = attention(g.constant(q), g.constant(k), g.constant(v), 2, false, &maps, &qo, &ko).value();
  CHECK(maps.size() == 4);
  for (int s = 0; s < 2; ++s) {
    auto part = attention(g.constant(q.middleRows(qo[s], qo[s + 1] - qo[s])), g.constant(k.middleRows(ko[s], ko[s + 1] - ko[s])),
                          g.constant(v.middleRows(ko[s], ko[s + 1] - ko[s])), 2)
                    .value();
    CHECK((joint.middleRows(qo[s], qo[s + 1] - qo[s]) - part).norm() < 1e-12);
  }
}

TEST_CASE("attention rejects bad shapes") {
  Graph<double> g;
  auto q = g.constant(Mat::Zero(2, 6));
  CHECK_THROWS_AS(attention(q, q, q, 4), ShapeError);
  CHECK_THROWS_AS(attention(q, g.constant(Mat::Zero(2, 4)), q, 2), ShapeError);
  ParameterStore<double> store;
  Rng rng(1);
  CHECK_THROWS_AS(MultiHeadAttention<double>::create(store, "x", 6, 4, rng), ShapeError);
}

TEST_CASE("ffn with zero weights is the identity") {
  Rng rng(10);
  ParameterStore<double> store;
  auto f = FeedForward<double>::create(store, "f", 8, 16, rng);
  for (auto& p : store) {
    if (p.name.find(".fc") != std::string::npos) p.value.setZero();
  }
  Graph<double> g(&store, false);
  Mat x = random_matrix(rng, 5, 8);
  CHECK(ffn_block(g, f, g.constant(x)).value() == x);
}

TEST_CASE("layer norm output has zero mean and unit variance") {
  Rng rng(12);
  Graph<double> g;
  auto y = layer_norm(g.constant(random_matrix(rng, 6, 64, 4.0)), g.constant(Mat::Ones(1, 64)), g.constant(Mat::Zero(1, 64)));
  for (Eigen::Index r = 0; r < 6; ++r) {
    const double mean = y.value().row(r).mean();
    const double var = (y.value().row(r).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("ffn and transformer block gradients match finite differences") {
  Rng rng(13);
  ParameterStore<double> store;
  auto f = FeedForward<double>::create(store, "f", 6, 12, rng);
  auto b = TransformerBlock<double>::create(store, "b", 6, 2, 12, rng);
  perturb(store, rng);
  auto r1 = grad_check([&](Graph<double>& g, const std::vector<Var<double>>& in) { return ffn_block(g, f, in[0]); },
                       {random_matrix(rng, 4, 6)}, {}, &store);
  CHECK(r1.max_rel_error < 1e-4);
  const Offsets off{0, 3, 5};
  auto r2 = grad_check([&](Graph<double>& g, const std::vector<Var<double>>& in) { return b(g, in[0], &off, true); },
                       {random_matrix(rng, 5, 6)}, {}, &store);
  CHECK(r2.max_rel_error < 1e-4);
}

TEST_CASE("frozen parameters receive no gradient") {
  Rng rng(14);
  ParameterStore<double> store;
  auto l = Linear<double>::create(store, "enc.proj", 3, 2, rng);
  auto h = Linear<double>::create(store, "head", 2, 1, rng);
  store.set_trainable("enc.", false);
  store.zero_grad();
  Graph<double> g(&store);
  g.backward(sum_all(h(g, l(g, g.constant(random_matrix(rng, 4, 3))))));
  CHECK(store.at("enc.proj.weight").grad.isZero());
  CHECK(!store.at("head.weight").grad.isZero());
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(15);
  ParameterStore<float> store;
  auto b = TransformerBlock<float>::create(store, "b", 8, 4, 16, rng);
  Matrix<float> x = random_matrix(rng, 6, 8).cast<float>();
  Graph<float> g1(&store), g2(&store);
  CHECK(b(g1, g1.constant(x)).value() == b(g2, g2.constant(x)).value());
}

TEST_CASE("checkpoint round trip") {
  Rng rng(16);
  ParameterStore<float> store;
  TransformerBlock<float>::create(store, "b", 8, 4, 16, rng);
  store.at("b.ln.gamma").trainable = false;
  const auto dir = std::filesystem::temp_directory_path() / "cvqa_nn_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(store, dir / "model", {{"step", 3}});
  auto manifest = read_checkpoint_manifest(dir / "model");
  CHECK(manifest["dtype"] == "float32");
  CHECK(manifest["metadata"]["step"] == 3);
  CHECK(std::filesystem::file_size(dir / "model.bin") == store.num_scalars() * 4);

  ParameterStore<float> other;
  Rng rng2(99);
  TransformerBlock<float>::create(other, "b", 8, 4, 16, rng2);
  load_checkpoint(other, dir / "model");
  for (std::size_t i = 0; i < store.size(); ++i) CHECK(store[static_cast<int>(i)].value == other[static_cast<int>(i)].value);

  auto wide = store.cast<double>();
  for (auto& p : wide) p.value.setZero();
  load_checkpoint(wide, dir / "model");
  CHECK(wide.at("b.attn.q.weight").value == store.at("b.attn.q.weight").value.cast<double>());

  ParameterStore<float> wrong;
  Linear<float>::create(wrong, "b.attn.q", 8, 4, rng2);
  CHECK_THROWS_AS(load_checkpoint(wrong, dir / "model"), ShapeError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("op suite covers graph ops and layers within tolerance") {
  auto checks = nn::check_all_ops(3);
  CHECK(checks.size() == 34);
  for (const auto& c : checks) {
    INFO(c.name << " worst " << c.report.worst);
    CHECK(c.report.entries > 0);
    CHECK(c.report.max_rel_error < 1e-6);
  }
}
