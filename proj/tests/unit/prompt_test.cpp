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

#include "cvqa/errors.hpp"
#include "cvqa/prompt/prompt.hpp"

using namespace cvqa;
using namespace cvqa::prompt;
using data::Vocab;

namespace {

data::Dataset small(int n, std::uint64_t seed) {
  data::GenConfig c;
  c.n_samples = n;
  c.seed = seed;
  c.cooccurrence_rate = 0.3;
  return data::generate_dataset(c);
}

data::VqaSample effusion_sample() {
  Rng rng(3);
  data::Scene s;
  s.organs = data::organ_layout(data::OrganType::kLung, 32);
  const auto q = data::Quadrant::kLeftLower;
  s.pathologies.push_back({data::Pathology::kEffusion, q, 2, data::lesion_box(data::Pathology::kEffusion, q, 32, rng)});
  data::VqaSample sample;
  sample.scene = s;
  sample.question = Vocab::builtin().encode("is this an xray?");
  return sample;
}

}  // namespace

TEST_CASE("noise-free pairs are read from the scene") {
  auto sample = effusion_sample();
  bool saw_does = false;
  for (int t = 0; t < 200; ++t) {
    Rng rng(t);
    auto pairs = generate_qa_pairs(sample, 1, 0.0, rng);
    REQUIRE(pairs.size() == 1);
    const auto parsed = data::parse_question(data::tokenize(pairs[0].question));
    REQUIRE(parsed.has_value());
    CHECK(pairs[0].template_id == parsed->id);
    CHECK(pairs[0].answer == data::answer_for(*sample.scene, *parsed));
    CHECK(!pairs[0].corrupted);
    if (pairs[0].question == "does the image contain effusion?") {
      saw_does = true;
      CHECK(pairs[0].answer == "yes");
    }
  }
  CHECK(saw_does);
}

TEST_CASE("pair count and noise rate bounds") {
  auto sample = effusion_sample();
  Rng rng(1);
  CHECK_THROWS_AS(generate_qa_pairs(sample, 4, 0.0, rng), RangeError);
  CHECK_THROWS_AS(generate_qa_pairs(sample, 0, 0.0, rng), RangeError);
  CHECK_THROWS_AS(generate_qa_pairs(sample, 2, 1.5, rng), RangeError);
  data::VqaSample bare;
  CHECK_THROWS_AS(generate_qa_pairs(bare, 1, 0.0, rng), NoSourceError);
}

TEST_CASE("full noise corrupts nearly every answer") {
  auto ds = small(200, 2);
  Rng rng(7);
  int corrupted = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t i = static_cast<std::size_t>(t) % ds.size();
    auto p = generate_qa_pairs(ds, i, 1, 1.0, rng)[0];
    auto parsed = data::parse_question(data::tokenize(p.question));
    REQUIRE(parsed.has_value());
    corrupted += p.answer != data::answer_for(*ds.samples[i].scene, *parsed);
  }
  CHECK(corrupted >= 970);
}

TEST_CASE("partial noise rate is honoured") {
  auto ds = small(200, 5);
  Rng rng(11);
  int corrupted = 0, total = 0;
  for (int t = 0; t < 2000; ++t) {
    for (const auto& p : generate_qa_pairs(ds, static_cast<std::size_t>(t) % ds.size(), 3, 0.2, rng)) {
      corrupted += p.corrupted;
      ++total;
    }
  }
  CHECK(static_cast<double>(corrupted) / total == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("ingested samples draw pairs from sibling questions") {
  data::Dataset ds;
  const auto& v = Vocab::builtin();
  for (const char* q : {"is this a ct?", "what is abnormal?", "does the image contain mass?"}) {
    data::VqaSample s;
    s.image_id = 1;
    s.question = v.encode(q);
    s.answer = v.encode(std::string(q).starts_with("what") ? "mass" : "yes");
    ds.samples.push_back(s);
  }
  Rng rng(2);
  auto pairs = generate_qa_pairs(ds, 0, 3, 0.0, rng);
  REQUIRE(pairs.size() == 3);
  for (const auto& p : pairs) CHECK(p.question != "is this a ct");
  data::Dataset lonely;
  lonely.samples.push_back(ds.samples[0]);
  CHECK_THROWS_AS(generate_qa_pairs(lonely, 0, 1, 0.0, rng), NoSourceError);
}

TEST_CASE("assembly follows the prompt format") {
  std::vector<QaPair> pairs{{"does the image contain effusion?", "yes", data::TemplateId::kDoes}};
  CHECK(assemble_text("", pairs, "where is the effusion located?") ==
        "Q1: does the image contain effusion? A1: yes Question: where is the effusion located? A:");
  const auto ids = assemble_prompt("", pairs, "where is the effusion located?");
  const auto& v = Vocab::builtin();
  CHECK(ids.front() == v.id("q1:"));
  CHECK(ids.back() == v.id("a:"));
  CHECK(ids == assemble_prompt("", pairs, "where is the effusion located?"));
  CHECK_THROWS_AS(assemble_prompt("", pairs, "is there pneumothorax?"), VocabError);
  CHECK(assemble_prompt("", pairs, "is there pneumothorax?", false)[11] == Vocab::kUnk);
  CHECK_THROWS_AS(assemble_text("", {}, "is this a ct?"), RangeError);
}

TEST_CASE("every instruction is in the vocabulary") {
  std::vector<QaPair> pairs{{"is this a ct?", "no", data::TemplateId::kIs}};
  for (const char* instr : kInstructions) CHECK_NOTHROW(assemble_prompt(instr, pairs, "is this a ct?"));
}

TEST_CASE("assembled prompts validate and round-trip") {
  auto ds = small(300, 8);
  const auto& v = Vocab::builtin();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng rng(i);
    const int n = 1 + static_cast<int>(i % 3);
    auto b = make_bundle(ds, i, n, 0.3, rng);
    const auto text = assemble_text(b.instructions, b.qa_pairs, b.question);
    CHECK(validate_prompt(text));
    CHECK(v.decode(b.ids) == v.decode(v.encode(text)));
    auto parsed = parse_prompt(text);
    REQUIRE(parsed.has_value());
    REQUIRE(parsed->pairs.size() == b.qa_pairs.size());
    CHECK(v.encode(parsed->instructions) == v.encode(b.instructions));
    CHECK(v.encode(parsed->question) == v.encode(b.question));
    for (std::size_t k = 0; k < b.qa_pairs.size(); ++k) {
      CHECK(v.encode(parsed->pairs[k].first) == v.encode(b.qa_pairs[k].question));
      CHECK(v.encode(parsed->pairs[k].second) == v.encode(b.qa_pairs[k].answer));
    }
    // Re-assembling the parsed fields gives the same ids.
    std::vector<QaPair> again;
    for (const auto& [q, a] : parsed->pairs) again.push_back({q, a, std::nullopt});
    CHECK(assemble_prompt(parsed->instructions, again, parsed->question) == b.ids);
  }
}

TEST_CASE("malformed prompts are rejected") {
  const std::string q = "does the image contain mass?";
  std::string four = "Q1: " + q + " A1: yes Q2: " + q + " A2: yes Q3: " + q + " A3: yes Q4: " + q +
                     " A4: yes Question: is this a ct? A:";
  CHECK(!validate_prompt(four));
  CHECK(!validate_prompt("Q1: Count the lesions? A1: 2 Question: is this a ct? A:"));
  CHECK(!validate_prompt("Question: is this a ct? A:"));
  CHECK(!validate_prompt("Q1: " + q + " A1: yes Question: is this a ct?"));
  CHECK(!validate_prompt("Q1: " + q + " A1: Question: is this a ct? A:"));
  CHECK(!validate_prompt("Q2: " + q + " A2: yes Question: is this a ct? A:"));
  CHECK(!validate_prompt("Q1: " + q + " A1: yes Question: is this a ct? A: yes"));
  CHECK(validate_prompt("Q1: " + q + " A1: yes Question: is this a ct? A:"));
}
