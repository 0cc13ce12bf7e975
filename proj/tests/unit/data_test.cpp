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
#include <fstream>
#include <set>

#include "cvqa/data/dataset.hpp"
#include "cvqa/data/image_io.hpp"
#include "cvqa/errors.hpp"

using namespace cvqa;
using namespace cvqa::data;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cvqa_data_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

GenConfig config(double rho, int n, std::uint64_t seed = 1) {
  GenConfig c;
  c.rho = rho;
  c.n_samples = n;
  c.seed = seed;
  return c;
}

// Entropy (nats) of the primary lesion type over distinct images.
double pathology_entropy(const Dataset& ds) {
  std::map<int, double> counts;
  std::set<int> seen;
  double n = 0;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.image_id).second) continue;
    counts[static_cast<int>(s.scene->pathologies.front().type)] += 1;
    n += 1;
  }
  double h = 0;
  for (const auto& [k, c] : counts) h -= (c / n) * std::log(c / n);
  return h;
}

Scene single_lesion(Pathology p, Quadrant q, int intensity, Rng& rng) {
  Scene s;
  s.pathologies.push_back({p, q, intensity, lesion_box(p, q, 32, rng)});
  return s;
}

}  // namespace

TEST_CASE("vocabulary encodes template questions without unknown words") {
  const auto& v = Vocab::builtin();
  CHECK(v.size() >= 60);
  auto ids = v.encode("Where is the Effusion located?");
  REQUIRE(ids.size() == 5);
  for (int t : ids) CHECK(t != Vocab::kUnk);
  CHECK(v.decode(ids) == "where is the effusion located");
  CHECK(v.encode("Q1: A1: Question: A:") == std::vector<int>{v.id("q1:"), v.id("a1:"), v.id("question:"), v.id("a:")});
  CHECK(v.encode("pneumothorax")[0] == Vocab::kUnk);
  CHECK_THROWS_AS(v.check({v.size()}), VocabError);
}

TEST_CASE("unconfounded generator has near-zero pathology-location MI") {
  auto c = config(0.0, 10000);
  c.gamma = 1.0;
  c.cooccurrence_rate = 0.0;
  CHECK(pathology_location_mi(generate_dataset(c)) < 0.01);
}

TEST_CASE("fully confounded generator ties location to pathology") {
  auto ds = generate_dataset(config(1.0, 10000));
  CHECK(std::abs(pathology_location_mi(ds) - pathology_entropy(ds)) < 0.02);
}

TEST_CASE("pathology-location MI is non-decreasing in rho") {
  double prev = -1.0;
  for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double mi = pathology_location_mi(generate_dataset(config(rho, 10000, 4)));
    CHECK(mi >= prev);
    prev = mi;
  }
}

TEST_CASE("class prior skew follows gamma") {
  auto c = config(0.5, 8000);
  c.gamma = 3.0;
  auto ds = generate_dataset(c);
  std::array<double, kNumPathologies> counts{};
  std::set<int> seen;
  for (const auto& s : ds.samples) {
    if (seen.insert(s.image_id).second) counts[static_cast<std::size_t>(s.scene->pathologies.front().type)] += 1;
  }
  for (std::size_t k = 1; k < counts.size(); ++k) CHECK(counts[k] < counts[k - 1]);
  CHECK(counts[0] / counts[1] == doctest::Approx(3.0).epsilon(0.15));
}

TEST_CASE("cooccurrence rate controls second lesions") {
  auto c = config(0.5, 4000);
  c.cooccurrence_rate = 0.5;
  auto ds = generate_dataset(c);
  std::set<int> seen;
  double two = 0, n = 0;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.image_id).second) continue;
    s.scene->validate();
    two += s.scene->pathologies.size() == 2;
    n += 1;
  }
  CHECK(two / n == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("generation is deterministic per seed") {
  auto a = dataset_to_json(generate_dataset(config(0.7, 300, 9))).dump();
  auto b = dataset_to_json(generate_dataset(config(0.7, 300, 9))).dump();
  auto c = dataset_to_json(generate_dataset(config(0.7, 300, 10))).dump();
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("generated samples are self-consistent") {
  auto ds = generate_dataset(config(0.6, 2000, 2));
  const auto& v = Vocab::builtin();
  std::map<int, int> per_image;
  for (const auto& s : ds.samples) {
    per_image[s.image_id]++;
    CHECK(s.question.size() >= 3);
    CHECK(s.question.size() <= 16);
    CHECK(s.answer.size() <= 4);
    auto words = tokenize(v.decode(s.question));
    auto parsed = parse_question(words);
    REQUIRE(parsed.has_value());
    CHECK(qtype_of(parsed->id) == s.qtype);
    CHECK(v.decode(s.answer) == answer_for(*s.scene, *parsed));
    CHECK(s.image->minCoeff() >= 0.0f);
    CHECK(s.image->maxCoeff() <= 1.0f);
  }
  for (const auto& [id, n] : per_image) CHECK(n >= 2);
}

TEST_CASE("closed answers are single closed-vocabulary tokens") {
  auto ds = generate_dataset(config(0.5, 10000, 3));
  const auto& v = Vocab::builtin();
  const std::set<int> closed{v.id("yes"), v.id("no"), v.id("left"), v.id("right")};
  int n_closed = 0;
  for (const auto& s : ds.samples) {
    if (s.qtype != QType::kClosed) continue;
    ++n_closed;
    REQUIRE(s.answer.size() == 1);
    CHECK(closed.count(s.answer[0]) == 1);
  }
  CHECK(n_closed > 3000);
}

TEST_CASE("template questions read answers from the scene") {
  Rng rng(1);
  Scene s = single_lesion(Pathology::kEffusion, Quadrant::kLeftLower, 2, rng);
  s.organs = organ_layout(OrganType::kLung, 32);
  const ParsedQuestion where{TemplateId::kWhere, {Subject::Kind::kDisease, static_cast<int>(Pathology::kEffusion)}};
  CHECK(question_text(where) == "where is the effusion located?");
  CHECK(answer_for(s, where) == "left lower");
  const ParsedQuestion does{TemplateId::kDoes, {Subject::Kind::kDisease, static_cast<int>(Pathology::kNodule)}};
  CHECK(answer_for(s, does) == "no");
  const ParsedQuestion side{TemplateId::kWhichSide, {Subject::Kind::kDisease, static_cast<int>(Pathology::kEffusion)}};
  CHECK(answer_for(s, side) == "left");
  const ParsedQuestion organ_where{TemplateId::kWhere, {Subject::Kind::kOrgan, static_cast<int>(OrganType::kLung)}};
  CHECK(answer_for(s, organ_where) == "left right");

  Scene empty;
  CHECK_THROWS_AS(make_question_answer(empty, TemplateId::kWhere, rng), TemplateMismatch);
  CHECK_THROWS_AS(answer_for(s, ParsedQuestion{TemplateId::kWhere, {Subject::Kind::kDisease, 3}}), TemplateMismatch);
}

TEST_CASE("question parser recognises exactly the templates") {
  CHECK(parse_question(tokenize("What diseases are in the image?"))->id == TemplateId::kWhat);
  CHECK(parse_question(tokenize("Which side is mass in the image?"))->id == TemplateId::kWhichSide);
  CHECK(parse_question(tokenize("Is this an MRI?"))->subject.kind == Subject::Kind::kModality);
  CHECK(!parse_question(tokenize("Is this a mri?")));
  CHECK(!parse_question(tokenize("Count the lesions?")));
  CHECK(!parse_question(tokenize("where is the ct located")));
  CHECK(question_type_key(tokenize("Does the image contain heart?")) == "Does");
  CHECK(question_type_key(tokenize("How many lesions?")) == "How");
  CHECK(question_type_key(tokenize("Count the lesions")) == "Else");
}

TEST_CASE("empty scene renders as noise") {
  Rng rng(5);
  Scene s;
  Image img = render_image(s, rng);
  CHECK(img.rows() == 32);
  CHECK(img.mean() < 0.1f);
}

TEST_CASE("high-intensity lesion stands out of the background") {
  // Measured over 100 renders of every lesion type.
  for (int p = 0; p < kNumPathologies; ++p) {
    double inside = 0, outside = 0;
    for (int t = 0; t < 100; ++t) {
      Rng rng(100 + t);
      Scene s = single_lesion(static_cast<Pathology>(p), static_cast<Quadrant>(t % 4), 3, rng);
      Image img = render_image(s, rng);
      const auto& b = s.pathologies[0].cells;
      double in = 0, out = 0;
      int n_in = 0, n_out = 0;
      for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
          if (b.contains(r, c)) {
            in += img(r, c);
            ++n_in;
          } else {
            out += img(r, c);
            ++n_out;
          }
        }
      }
      inside += in / n_in;
      outside += out / n_out;
    }
    INFO(name(static_cast<Pathology>(p)));
    CHECK((inside - outside) / 100.0 >= 0.3);
  }
}

TEST_CASE("two disjoint lesions both exceed the background") {
  Rng rng(7);
  Scene s = single_lesion(Pathology::kMass, Quadrant::kLeftUpper, 2, rng);
  s.pathologies.push_back({Pathology::kNodule, Quadrant::kRightLower, 2, lesion_box(Pathology::kNodule, Quadrant::kRightLower, 32, rng)});
  s.validate();
  Image img = render_image(s, rng);
  const float background = img.block(0, 16, 16, 16).mean();
  for (const auto& p : s.pathologies) {
    const auto& b = p.cells;
    CHECK(img.block(b.r0, b.c0, b.r1 - b.r0, b.c1 - b.c0).mean() > background + 0.2f);
  }
}

TEST_CASE("scene validation") {
  Rng rng(8);
  Scene s = single_lesion(Pathology::kMass, Quadrant::kLeftUpper, 2, rng);
  s.pathologies.push_back(s.pathologies[0]);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  Scene t;
  t.organs = {{OrganType::kHeart, Side::kLeft, {12, 11, 22, 21}}};
  CHECK_THROWS_AS(t.validate(), ConfigError);
  Scene u = single_lesion(Pathology::kMass, Quadrant::kLeftUpper, 4, rng);
  CHECK_THROWS_AS(u.validate(), ConfigError);
}

TEST_CASE("invalid generator configs are rejected") {
  auto c = config(1.5, 10);
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  c = config(0.5, 0);
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  c = config(0.5, 10);
  c.gamma = 0.5;
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
  CHECK_THROWS_AS(gen_config_from_json({{"rho", 0.5}, {"bogus", 1}}), ConfigError);
  CHECK(gen_config_from_json({{"rho", 0.25}}).rho == 0.25);
}

TEST_CASE("split sizes, determinism and OOD regeneration") {
  auto ds = generate_dataset(config(0.9, 1000, 5));
  auto a = split(ds, 0.8, 1);
  CHECK(a.train.size() == 800);
  CHECK(a.test.size() == 200);
  std::set<int> train_images;
  for (const auto& s : a.train.samples) train_images.insert(s.image_id);
  for (const auto& s : a.test.samples) CHECK(train_images.count(s.image_id) == 0);
  auto b = split(ds, 0.8, 1);
  CHECK(dataset_to_json(a.test).dump() == dataset_to_json(b.test).dump());
  CHECK_THROWS_AS(split(ds, 1.0, 1), ConfigError);

  auto big = generate_dataset(config(0.9, 10000, 6));
  auto ood = split(big, 0.8, 1, 0.1);
  CHECK(ood.test.size() == 2000);
  CHECK(ood.test.config->rho == 0.1);
  CHECK(pathology_location_mi(ood.train) - pathology_location_mi(ood.test) > 0.2);
}

TEST_CASE("dataset JSON round trip with inline and file images") {
  auto ds = generate_dataset(config(0.5, 40, 11));
  for (auto storage : {ImageStorage::kInline, ImageStorage::kFiles}) {
    auto dir = scratch(storage == ImageStorage::kInline ? "inline" : "files");
    save_dataset(ds, dir, storage);
    auto back = load_dataset(dir / "dataset.json");
    REQUIRE(back.size() == ds.size());
    CHECK(back.config.has_value());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.samples[i].question == ds.samples[i].question);
      CHECK(back.samples[i].answer == ds.samples[i].answer);
      CHECK(back.samples[i].qtype == ds.samples[i].qtype);
      CHECK(back.samples[i].image_id == ds.samples[i].image_id);
      REQUIRE(back.samples[i].image);
      const double tol = storage == ImageStorage::kInline ? 0.0 : 1.0 / 65535.0;
      CHECK((*back.samples[i].image - *ds.samples[i].image).cwiseAbs().maxCoeff() <= tol);
    }
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("external SLAKE and VQA-RAD records") {
  auto dir = scratch("external");
  {
    std::ofstream f(dir / "slake.json");
    f << R"([{"img_id": 3, "img_name": "xmlab3/source.jpg", "question": "Does the image contain nodule?",
              "answer": "Yes", "answer_type": "CLOSED", "q_lang": "en"},
             {"img_id": 3, "img_name": "xmlab3/source.jpg", "question": "这是什么", "answer": "肺", "q_lang": "zh"}])";
  }
  auto slake = load_external(dir / "slake.json", "slake-json");
  REQUIRE(slake.size() == 1);
  CHECK(slake.samples[0].qtype == QType::kClosed);
  CHECK(!slake.samples[0].scene);
  CHECK(Vocab::builtin().decode(slake.samples[0].answer) == "yes");

  Image img = Image::Constant(64, 64, 0.5f);
  write_png(img, dir / "synpic1.png");
  {
    std::ofstream f(dir / "rad.json");
    f << R"([{"image_name": "synpic1.png", "question": "Is this a ct?", "answer": "no", "answer_type": "CLOSED"},
             {"image_name": "synpic1.png", "question": "what is abnormal?", "answer": 2}])";
  }
  auto rad = load_external(dir / "rad.json", "vqarad-json");
  REQUIRE(rad.size() == 2);
  REQUIRE(rad.samples[0].image);
  CHECK(rad.samples[0].image->rows() == 32);
  CHECK(std::abs((*rad.samples[0].image)(5, 5) - 0.5f) < 0.01f);
  CHECK(rad.samples[1].qtype == QType::kOpen);
  CHECK(rad.samples[1].answer[0] == Vocab::kUnk);
  CHECK(rad.siblings(0) == std::vector<std::size_t>{1});

  {
    std::ofstream f(dir / "bad.json");
    f << R"([{"image_name": "a.png", "question": "Is this a ct?"}])";
  }
  CHECK_THROWS_AS(load_external(dir / "bad.json", "vqarad-json"), SchemaError);
  {
    std::ofstream f(dir / "broken.json");
    f << "[{";
  }
  CHECK_THROWS_AS(load_external(dir / "broken.json", "slake-json"), ParseError);
  CHECK_THROWS_AS(load_external(dir / "rad.json", "pathvqa"), ConfigError);

  // Ingested and generated datasets share one schema.
  auto keys = [](const nlohmann::json& doc) {
    std::set<std::string> k;
    for (const auto& [key, v] : doc["samples"][0].items()) k.insert(key);
    return k;
  };
  auto ingested = keys(dataset_to_json(rad));
  auto generated = keys(dataset_to_json(generate_dataset(config(0.5, 4))));
  for (const char* required : {"image", "question", "answer", "qtype"}) {
    CHECK(ingested.count(required) == 1);
    CHECK(generated.count(required) == 1);
  }
  std::filesystem::remove_all(dir);
}
