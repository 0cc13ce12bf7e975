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
#include <numeric>

#include "cvqa/errors.hpp"
#include "cvqa/scm/io.hpp"
#include "cvqa/scm/scm.hpp"

using namespace cvqa;
using namespace cvqa::scm;

namespace {

ScmSpec fig2_spec() {
  ScmSpec s;
  s.variables = {{"C", 2}, {"C_i", 2}, {"C_q", 2}, {"I", 2}, {"Q", 2}, {"M_i", 2}, {"M_q", 2}, {"A", 2}};
  s.parents = {{"C_i", {"C"}}, {"C_q", {"C"}}, {"I", {"C_i"}}, {"Q", {"C_q"}},
               {"M_i", {"I"}}, {"M_q", {"Q"}}, {"A", {"M_i", "M_q", "I", "Q", "C"}}};
  s.cpts["C"] = {0.5, 0.5};
  for (const char* n : {"C_i", "C_q", "I", "Q", "M_i", "M_q"}) s.cpts[n] = {0.8, 0.2, 0.3, 0.7};
  std::vector<double> a;
  for (int r = 0; r < 32; ++r) {
    double p = 0.1 + 0.8 * (r % 7) / 6.0;
    a.push_back(p);
    a.push_back(1.0 - p);
  }
  s.cpts["A"] = a;
  return s;
}

// Forward sampling in topological order; independent of the enumeration path.
std::vector<double> monte_carlo_joint(const DiscreteScm& scm, std::size_t n, Rng& rng) {
  std::size_t states = scm.state_space();
  std::vector<double> counts(states, 0.0);
  std::vector<int> value(scm.num_variables());
  for (std::size_t s = 0; s < n; ++s) {
    for (int v : scm.topological_order()) {
      std::size_t row = 0;
      for (int p : scm.parents(v)) row = row * static_cast<std::size_t>(scm.card(p)) + static_cast<std::size_t>(value[static_cast<std::size_t>(p)]);
      const auto& cpt = scm.cpt(v);
      double u = uniform01(rng), acc = 0.0;
      int pick = scm.card(v) - 1;
      for (int a = 0; a < scm.card(v); ++a) {
        acc += cpt[row * static_cast<std::size_t>(scm.card(v)) + static_cast<std::size_t>(a)];
        if (u < acc) {
          pick = a;
          break;
        }
      }
      value[static_cast<std::size_t>(v)] = pick;
    }
    std::size_t flat = 0;
    for (std::size_t v = 0; v < scm.num_variables(); ++v) flat = flat * static_cast<std::size_t>(scm.card(static_cast<int>(v))) + static_cast<std::size_t>(value[v]);
    counts[flat] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(n);
  return counts;
}

}  // namespace

TEST_CASE("build_scm accepts a single binary node") {
  ScmSpec s;
  s.variables = {{"X", 2}};
  s.cpts["X"] = {0.5, 0.5};
  auto scm = build_scm(s);
  CHECK(scm.num_variables() == 1);
}

TEST_CASE("build_scm rejects a CPT row that is not a distribution") {
  ScmSpec s;
  s.variables = {{"C", 2}, {"X", 2}, {"A", 2}};
  s.parents = {{"X", {"C"}}, {"A", {"X"}}};
  s.cpts = {{"C", {0.5, 0.5}}, {"X", {0.7, 0.4, 0.5, 0.5}}, {"A", {0.5, 0.5, 0.5, 0.5}}};
  CHECK_THROWS_AS(build_scm(s), CptError);
}

TEST_CASE("build_scm rejects cycles and unknown parents") {
  ScmSpec s;
  s.variables = {{"X", 2}, {"Y", 2}};
  s.parents = {{"X", {"Y"}}, {"Y", {"X"}}};
  s.cpts = {{"X", {0.5, 0.5, 0.5, 0.5}}, {"Y", {0.5, 0.5, 0.5, 0.5}}};
  CHECK_THROWS_AS(build_scm(s), CycleError);

  ScmSpec t;
  t.variables = {{"X", 2}};
  t.parents = {{"X", {"Z"}}};
  t.cpts = {{"X", {0.5, 0.5}}};
  CHECK_THROWS_AS(build_scm(t), UnknownVariable);
}

TEST_CASE("the two-mediator topology is valid and puts C first") {
  auto scm = build_scm(fig2_spec());
  CHECK(scm.name(scm.topological_order().front()) == "C");
  CHECK(scm.has_edge("I", "M_i"));
  CHECK(scm.has_edge("C", "A"));
}

TEST_CASE("joint of independent fair coins is uniform") {
  ScmSpec s;
  s.variables = {{"X", 2}, {"Y", 2}};
  s.cpts = {{"X", {0.5, 0.5}}, {"Y", {0.5, 0.5}}};
  auto j = joint_distribution(build_scm(s));
  for (double p : j.probs()) CHECK(p == 0.25);
}

TEST_CASE("joint of a deterministic copy is diagonal") {
  ScmSpec s;
  s.variables = {{"X", 2}, {"A", 2}};
  s.parents = {{"A", {"X"}}};
  s.cpts = {{"X", {0.7, 0.3}}, {"A", {1.0, 0.0, 0.0, 1.0}}};
  auto j = joint_distribution(build_scm(s));
  const int one_one[] = {1, 1}, zero_one[] = {0, 1}, one_zero[] = {1, 0};
  CHECK(j.at(one_one) == doctest::Approx(0.3));
  CHECK(j.at(zero_one) == 0.0);
  CHECK(j.at(one_zero) == 0.0);
}

TEST_CASE("joint matches forward-sampling Monte Carlo within 3 sigma") {
  Rng rng(7);
  ScmSpec s;
  s.variables = {{"X", 3}, {"Y", 2}, {"Z", 2}};
  s.parents = {{"Y", {"X"}}, {"Z", {"X", "Y"}}};
  s.cpts = {{"X", {0.2, 0.5, 0.3}},
            {"Y", {0.9, 0.1, 0.4, 0.6, 0.25, 0.75}},
            {"Z", {0.1, 0.9, 0.6, 0.4, 0.35, 0.65, 0.5, 0.5, 0.8, 0.2, 0.05, 0.95}}};
  auto scm = build_scm(s);
  auto exact = joint_distribution(scm);
  CHECK(exact.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
  const std::size_t n = 1'000'000;
  auto mc = monte_carlo_joint(scm, n, rng);
  for (std::size_t k = 0; k < exact.size(); ++k) {
    double p = exact.probs()[k];
    double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
    CHECK(std::abs(mc[k] - p) <= 3 * sigma + 1e-12);
  }
}

TEST_CASE("joint refuses oversized state spaces") {
  ScmSpec s;
  for (int k = 0; k < 24; ++k) {
    s.variables.push_back({"V" + std::to_string(k), 2});
    s.cpts["V" + std::to_string(k)] = {0.5, 0.5};
  }
  CHECK_THROWS_AS(joint_distribution(build_scm(s)), StateSpaceError);
}

TEST_CASE("log-space joint over many binary variables keeps unit mass") {
  ScmSpec s;
  for (int k = 0; k < 22; ++k) {
    s.variables.push_back({"V" + std::to_string(k), 2});
    if (k == 0) {
      s.cpts["V0"] = {0.3, 0.7};
    } else {
      s.parents["V" + std::to_string(k)] = {"V" + std::to_string(k - 1)};
      s.cpts["V" + std::to_string(k)] = {0.9, 0.1, 0.2, 0.8};
    }
  }
  auto j = joint_distribution(build_scm(s));
  CHECK(std::abs(j.total_mass() - 1.0) < 1e-12);
}

TEST_CASE("intervening on a root only replaces its marginal") {
  ScmSpec s;
  s.variables = {{"C", 2}, {"X", 2}};
  s.parents = {{"X", {"C"}}};
  s.cpts = {{"C", {0.4, 0.6}}, {"X", {0.9, 0.1, 0.2, 0.8}}};
  auto scm = build_scm(s);
  auto before = joint_distribution(scm);
  auto after = joint_distribution(intervene(scm, {{"C", 1}}));
  auto cond = conditional(before, {"C"}, "X");
  auto px = after.marginal({"X"});
  CHECK(px.probs()[0] == doctest::Approx(cond.at(1, 0)).epsilon(1e-15));
  CHECK(after.marginal({"C"}).probs()[1] == 1.0);
}

TEST_CASE("interventional and observational differ under confounding") {
  ScmSpec s;
  s.variables = {{"C", 2}, {"X", 2}, {"A", 2}};
  s.parents = {{"X", {"C"}}, {"A", {"C", "X"}}};
  s.cpts = {{"C", {0.5, 0.5}},
            {"X", {0.9, 0.1, 0.1, 0.9}},
            {"A", {0.9, 0.1, 0.7, 0.3, 0.4, 0.6, 0.2, 0.8}}};
  auto scm = build_scm(s);
  auto obs = conditional(joint_distribution(scm), {"X"}, "A");
  auto doq = interventional(scm, {"X"}, "A");
  // Hand enumeration: P(A=1|do(X=1)) = 0.5*0.3 + 0.5*0.8 = 0.55.
  CHECK(doq.at(1, 1) == doctest::Approx(0.55).epsilon(1e-14));
  // P(A=1|X=1) = (0.5*0.1*0.3 + 0.5*0.9*0.8) / (0.5*0.1 + 0.5*0.9) = 0.75.
  CHECK(obs.at(1, 1) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("intervening on every variable yields a point mass") {
  auto scm = build_scm(fig2_spec());
  std::map<std::string, int> all;
  for (const auto& v : scm.variables()) all[v.name] = 1;
  auto j = joint_distribution(intervene(scm, all));
  std::size_t nonzero = 0;
  for (double p : j.probs()) nonzero += p > 0.0 ? 1 : 0;
  CHECK(nonzero == 1);
  CHECK(j.probs().back() == 1.0);
}

TEST_CASE("intervene validates names and values") {
  auto scm = build_scm(fig2_spec());
  CHECK_THROWS_AS(intervene(scm, {{"nope", 0}}), UnknownVariable);
  CHECK_THROWS_AS(intervene(scm, {{"I", 2}}), ValueOutOfRange);
}

TEST_CASE("front-door on an unconfounded chain equals the conditional") {
  ScmSpec s;
  s.variables = {{"I", 2}, {"M", 3}, {"A", 2}};
  s.parents = {{"M", {"I"}}, {"A", {"M"}}};
  s.cpts = {{"I", {0.3, 0.7}},
            {"M", {0.2, 0.5, 0.3, 0.6, 0.1, 0.3}},
            {"A", {0.9, 0.1, 0.5, 0.5, 0.15, 0.85}}};
  auto scm = build_scm(s);
  auto fd = frontdoor_estimate(scm, {"I"}, {"M"}, "A");
  auto obs = conditional(joint_distribution(scm), {"I"}, "A");
  for (std::size_t k = 0; k < fd.probs.size(); ++k) CHECK(fd.probs[k] == doctest::Approx(obs.probs[k]).epsilon(1e-14));
}

TEST_CASE("front-door rejects a confounded mediator") {
  ScmSpec s = fig2_spec();
  s.parents["A"] = {"M_i", "M_q", "C"};
  std::vector<double> a;
  for (int r = 0; r < 8; ++r) {
    a.push_back(0.3);
    a.push_back(0.7);
  }
  s.cpts["A"] = a;
  s.parents["M_i"] = {"I", "C"};
  s.cpts["M_i"] = {0.8, 0.2, 0.3, 0.7, 0.6, 0.4, 0.1, 0.9};
  CHECK_THROWS_AS(frontdoor_estimate(build_scm(s), {"I", "Q"}, {"M_i", "M_q"}, "A"), CriterionError);
}

TEST_CASE("front-door rejects a direct treatment->outcome edge") {
  CHECK_THROWS_AS(frontdoor_estimate(build_scm(fig2_spec()), {"I", "Q"}, {"M_i", "M_q"}, "A"), CriterionError);
}

TEST_CASE("front-door matches graph mutilation on fuzzed two-mediator models") {
  Rng rng(2024);
  for (bool link : {false, true}) {
    FuzzOptions opt;
    opt.mediator_link = link;
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      auto scm = build_scm(random_vqa_spec(rng, opt));
      auto fd = frontdoor_estimate(scm, {"I", "Q"}, {"M_i", "M_q"}, "A");
      auto truth = interventional(scm, {"I", "Q"}, "A");
      for (std::size_t k = 0; k < fd.probs.size(); ++k) worst = std::max(worst, std::abs(fd.probs[k] - truth.probs[k]));
      for (std::size_t r = 0; r < fd.rows(); ++r) {
        auto row = fd.row(r);
        CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-10);
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("unconfounded inputs make do() equal to conditioning") {
  Rng rng(99);
  FuzzOptions opt;
  opt.confound_inputs = false;
  for (int trial = 0; trial < 20; ++trial) {
    auto scm = build_scm(random_vqa_spec(rng, opt));
    auto joint = joint_distribution(scm);
    REQUIRE(mutual_information(joint, "C", "I") < 1e-12);
    REQUIRE(mutual_information(joint, "C", "Q") < 1e-12);
    auto truth = interventional(scm, {"I", "Q"}, "A");
    auto obs = conditional(joint, {"I", "Q"}, "A");
    for (std::size_t k = 0; k < obs.probs.size(); ++k) CHECK(std::abs(obs.probs[k] - truth.probs[k]) < 1e-10);
  }
}

TEST_CASE("mutual information closed forms") {
  ScmSpec ind;
  ind.variables = {{"X", 2}, {"Y", 2}};
  ind.cpts = {{"X", {0.3, 0.7}}, {"Y", {0.6, 0.4}}};
  auto ji = joint_distribution(build_scm(ind));
  CHECK(mutual_information(ji, "X", "Y") == doctest::Approx(0.0).epsilon(1e-15));

  ScmSpec copy;
  copy.variables = {{"X", 2}, {"Y", 2}};
  copy.parents = {{"Y", {"X"}}};
  copy.cpts = {{"X", {0.5, 0.5}}, {"Y", {1.0, 0.0, 0.0, 1.0}}};
  auto jc = joint_distribution(build_scm(copy));
  CHECK(mutual_information(jc, "X", "Y") == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(mutual_information(jc, "X", "X") == doctest::Approx(0.6931471805599453).epsilon(1e-14));
  CHECK_THROWS_AS(mutual_information(jc, "X", "Z"), UnknownVariable);
}

TEST_CASE("mutual information is symmetric and bounded by entropies") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto joint = joint_distribution(build_scm(random_vqa_spec(rng)));
    for (auto [x, y] : {std::pair{"C", "I"}, std::pair{"I", "A"}, std::pair{"M_i", "Q"}}) {
      double a = mutual_information(joint, x, y);
      double b = mutual_information(joint, y, x);
      CHECK(a == b);
      CHECK(a >= 0.0);
      CHECK(a <= std::min(entropy(joint, x), entropy(joint, y)) + 1e-12);
    }
  }
}

TEST_CASE("interventional rows are distributions") {
  Rng rng(11);
  auto scm = build_scm(random_vqa_spec(rng));
  auto truth = interventional(scm, {"I", "Q"}, "A");
  for (std::size_t r = 0; r < truth.rows(); ++r) {
    auto row = truth.row(r);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-10);
  }
}

TEST_CASE("SCM JSON round-trips through nested CPT arrays") {
  Rng rng(3);
  ScmSpec spec = random_vqa_spec(rng, {.max_card = 3, .mediator_link = true});
  auto doc = spec_to_json(spec);
  CHECK(doc["cpts"]["A"].is_array());
  ScmSpec back = spec_from_json(doc);
  CHECK(back.cpts == spec.cpts);
  CHECK(back.parents.at("M_q") == spec.parents.at("M_q"));
  CHECK_THROWS_AS(spec_from_json(nlohmann::json::parse(R"({"cpts":{}})")), ParseError);
}
