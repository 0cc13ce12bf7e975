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

#include "cvqa/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvqa/errors.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::nn {
namespace {

struct Evaluator {
  const GraphFn& op;
  ParameterStore<double>* store;
  Matrix<double> projection;

  Var<double> reduce(Graph<double>& g, Var<double> out) {
    if (out.rows() == 1 && out.cols() == 1) return out;
    if (projection.rows() != out.rows() || projection.cols() != out.cols()) {
      throw ShapeError("grad_check: output shape changed between evaluations");
    }
    return sum_all(mul(out, g.constant(projection)));
  }

  double value(const std::vector<Matrix<double>>& inputs) {
    Graph<double> g(store, false);
    std::vector<Var<double>> leaves;
    for (const auto& m : inputs) leaves.push_back(g.constant(m));
    return reduce(g, op(g, leaves)).scalar();
  }
};

std::vector<Eigen::Index> pick(Eigen::Index size, std::size_t limit, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (limit == 0 || idx.size() <= limit) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Derivative of f with respect to x; x is restored afterwards.
template <typename F>
double central_difference(double& x, const GradCheckOptions& o, F&& f) {
  const double orig = x;
  auto at = [&](double step) {
    x = orig + step;
    return f();
  };
  double d;
  if (o.stencil == 2) {
    d = (at(o.eps) - at(-o.eps)) / (2.0 * o.eps);
  } else {
    d = (8.0 * (at(o.eps) - at(-o.eps)) - (at(2.0 * o.eps) - at(-2.0 * o.eps))) / (12.0 * o.eps);
  }
  x = orig;
  return d;
}

}  // namespace

GradCheckReport grad_check(const GraphFn& op, const std::vector<Matrix<double>>& inputs,
                           const GradCheckOptions& options, ParameterStore<double>* store) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) throw RangeError("grad_check eps must lie in [1e-7, 1e-3]");
  if (options.stencil != 2 && options.stencil != 4) throw RangeError("grad_check stencil must be 2 or 4");
  Rng rng(options.seed);
  Evaluator eval{op, store, {}};

  // Analytic pass. The projection is drawn once the output shape is known.
  std::vector<Matrix<double>> analytic_inputs;
  {
    Graph<double> g(store, true);
    std::vector<Var<double>> leaves;
    for (const auto& m : inputs) leaves.push_back(g.input(m));
    auto out = op(g, leaves);
    if (out.rows() != 1 || out.cols() != 1) {
      eval.projection.resize(out.rows(), out.cols());
      for (Eigen::Index i = 0; i < eval.projection.size(); ++i) eval.projection.data()[i] = standard_normal(rng);
    }
    auto root = eval.reduce(g, out);
    if (store != nullptr) store->zero_grad();
    g.backward(root);
    for (const auto& leaf : leaves) {
      analytic_inputs.push_back(g.has_grad(leaf.id()) ? leaf.grad() : Matrix<double>::Zero(leaf.rows(), leaf.cols()));
    }
  }

  GradCheckReport report;
  auto compare = [&](double analytic, double numeric, const std::string& where) {
    analytic *= options.analytic_scale;
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double rel = abs_err / denom;
    ++report.entries;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (report.worst.empty() || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = where;
    }
  };

  std::vector<Matrix<double>> probe = inputs;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (Eigen::Index i : pick(probe[t].size(), options.max_entries_per_tensor, rng)) {
      double& x = probe[t].data()[i];
      const double numeric = central_difference(x, options, [&] { return eval.value(probe); });
      compare(analytic_inputs[t].data()[i], numeric, "input" + std::to_string(t) + "[" + std::to_string(i) + "]");
    }
  }
  if (store != nullptr) {
    for (auto& p : *store) {
      if (!p.trainable) continue;
      const Matrix<double> analytic = p.grad;
      for (Eigen::Index i : pick(p.value.size(), options.max_entries_per_tensor, rng)) {
        const double numeric = central_difference(p.value.data()[i], options, [&] { return eval.value(inputs); });
        compare(analytic.data()[i], numeric, p.name + "[" + std::to_string(i) + "]");
      }
    }
  }
  return report;
}

}  // namespace cvqa::nn
