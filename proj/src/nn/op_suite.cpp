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

#include "cvqa/nn/op_suite.hpp"

#include "cvqa/nn/layers.hpp"

namespace cvqa::nn {

namespace {

using Mat = Matrix<double>;
using In = std::vector<Var<double>>;

Mat random_matrix(Rng& rng, int r, int c, double sd = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * standard_normal(rng);
  return m;
}

// Zero-initialized parameters would hide gradient paths.
void randomize(ParameterStore<double>& store, Rng& rng) {
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * standard_normal(rng);
  }
}

}  // namespace

std::vector<OpCheck> check_all_ops(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng = make_rng(seed, "op_suite");
  struct Case {
    const char* name;
    GraphFn fn;
    std::vector<Mat> inputs;
    ParameterStore<double>* store = nullptr;
  };
  const Offsets seg{0, 2, 5};
  const Offsets kseg{0, 3, 4};
  const std::vector<int> rows{2, 0, 2, 1};

  ParameterStore<double> mha_store, ffn_store, block_store;
  auto attn = MultiHeadAttention<double>::create(mha_store, "mha", 4, 2, rng);
  auto ffn = FeedForward<double>::create(ffn_store, "ffn", 4, 6, rng);
  auto block = TransformerBlock<double>::create(block_store, "block", 4, 2, 6, rng);
  randomize(mha_store, rng);
  randomize(ffn_store, rng);
  randomize(block_store, rng);

  std::vector<Case> cases = {
      {"matmul", [](auto&, const In& in) { return matmul(in[0], in[1]); }, {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)}},
      {"matmul_nt", [](auto&, const In& in) { return matmul_nt(in[0], in[1]); }, {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)}},
      {"linear", [](auto&, const In& in) { return linear(in[0], in[1], in[2]); },
       {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2), random_matrix(rng, 1, 2)}},
      {"add", [](auto&, const In& in) { return add(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"sub", [](auto&, const In& in) { return sub(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"mul", [](auto&, const In& in) { return mul(in[0], in[1]); }, {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)}},
      {"scale", [](auto&, const In& in) { return scale(in[0], 0.7); }, {random_matrix(rng, 2, 3)}},
      {"add_scalar", [](auto&, const In& in) { return add_scalar(in[0], 0.7); }, {random_matrix(rng, 2, 3)}},
      {"add_row", [](auto&, const In& in) { return add_row(in[0], in[1]); }, {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)}},
      {"scale_by", [](auto&, const In& in) { return scale_by(in[0], in[1]); }, {random_matrix(rng, 4, 3), random_matrix(rng, 1, 1)}},
      {"layer_norm", [](auto&, const In& in) { return layer_norm(in[0], in[1], in[2]); },
       {random_matrix(rng, 4, 6), random_matrix(rng, 1, 6), random_matrix(rng, 1, 6)}},
      {"gelu", [](auto&, const In& in) { return gelu(in[0]); }, {random_matrix(rng, 4, 5, 2.0)}},
      {"sigmoid", [](auto&, const In& in) { return sigmoid(in[0]); }, {random_matrix(rng, 4, 5, 2.0)}},
      {"log_eps", [](auto&, const In& in) { return log_eps(softmax_rows(in[0]), 1e-9); }, {random_matrix(rng, 3, 4)}},
      {"softmax_rows", [](auto&, const In& in) { return softmax_rows(in[0]); }, {random_matrix(rng, 3, 5, 2.0)}},
      {"log_softmax_rows", [](auto&, const In& in) { return log_softmax_rows(in[0]); }, {random_matrix(rng, 3, 5, 2.0)}},
      {"mean_rows", [](auto&, const In& in) { return mean_rows(in[0]); }, {random_matrix(rng, 4, 3)}},
      {"broadcast_rows", [](auto&, const In& in) { return broadcast_rows(in[0], 3); }, {random_matrix(rng, 1, 3)}},
      {"pool_rows", [](auto&, const In& in) { return pool_rows(in[0], 2); }, {random_matrix(rng, 6, 3)}},
      {"concat_cols", [](auto&, const In& in) { return concat_cols<double>(std::vector<Var<double>>{in[0], in[1]}); },
       {random_matrix(rng, 3, 2), random_matrix(rng, 3, 4)}},
      {"concat_rows", [](auto&, const In& in) { return concat_rows<double>(std::vector<Var<double>>{in[0], in[1]}); },
       {random_matrix(rng, 2, 3), random_matrix(rng, 1, 3)}},
      {"gather_rows", [rows](auto&, const In& in) { return gather_rows<double>(in[0], rows); }, {random_matrix(rng, 3, 4)}},
      {"slice_rows", [](auto&, const In& in) { return slice_rows(in[0], 1, 2); }, {random_matrix(rng, 4, 3)}},
      {"sum_all", [](auto&, const In& in) { return sum_all(in[0]); }, {random_matrix(rng, 4, 3)}},
      {"element", [](auto&, const In& in) { return element(in[0], 2, 1); }, {random_matrix(rng, 4, 3)}},
      {"diagonal", [](auto&, const In& in) { return diagonal(in[0]); }, {random_matrix(rng, 4, 4)}},
      {"segment_mean", [seg](auto&, const In& in) { return segment_mean(in[0], seg); }, {random_matrix(rng, 5, 3)}},
      {"segment_broadcast", [seg](auto&, const In& in) { return segment_broadcast(in[0], seg); }, {random_matrix(rng, 2, 3)}},
      {"attention", [](auto&, const In& in) { return attention(in[0], in[1], in[2], 2); },
       {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4), random_matrix(rng, 5, 4)}},
      {"attention_causal", [](auto&, const In& in) { return attention(in[0], in[1], in[2], 2, true); },
       {random_matrix(rng, 4, 4), random_matrix(rng, 4, 4), random_matrix(rng, 4, 4)}},
      {"attention_segments",
       [seg, kseg](auto&, const In& in) { return attention<double>(in[0], in[1], in[2], 2, false, nullptr, &seg, &kseg); },
       {random_matrix(rng, 5, 4), random_matrix(rng, 4, 4), random_matrix(rng, 4, 4)}},
      {"multi_head_attention", [&attn](auto& g, const In& in) { return attn(g, in[0], in[1], in[1]); },
       {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)}, &mha_store},
      {"feed_forward", [&ffn](auto& g, const In& in) { return ffn(g, in[0]); }, {random_matrix(rng, 3, 4)}, &ffn_store},
      {"transformer_block_causal", [&block, seg](auto& g, const In& in) { return block(g, in[0], &seg, true); },
       {random_matrix(rng, 5, 4)}, &block_store},
  };
  std::vector<OpCheck> out;
  for (auto& c : cases) out.push_back({c.name, grad_check(c.fn, c.inputs, options, c.store)});
  return out;
}

}  // namespace cvqa::nn
