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

#include "cvqa/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "cvqa/data/image_io.hpp"
#include "cvqa/errors.hpp"

namespace cvqa::data {
namespace {

// Configuration the confounder imposes when it is active.
constexpr std::array<Quadrant, kNumPathologies> kPreferredLocation{Quadrant::kLeftLower, Quadrant::kRightLower,
                                                                   Quadrant::kLeftUpper, Quadrant::kRightUpper};
constexpr std::array<Modality, kNumPathologies> kPreferredModality{Modality::kXray, Modality::kCt, Modality::kMri,
                                                                   Modality::kXray};

int categorical(Rng& rng, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

std::vector<double> class_prior(double gamma) {
  std::vector<double> w(kNumPathologies);
  for (int c = 0; c < kNumPathologies; ++c) w[static_cast<std::size_t>(c)] = std::pow(gamma, -c);
  return w;
}

std::string json_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::shared_ptr<const Image> load_image_cached(const std::filesystem::path& path, int grid,
                                               std::map<std::string, std::shared_ptr<const Image>>& cache) {
  auto it = cache.find(path.string());
  if (it != cache.end()) return it->second;
  Image img = read_image(path);
  if (grid > 0 && (img.rows() != grid || img.cols() != grid)) img = resample(img, grid);
  auto ptr = std::make_shared<const Image>(std::move(img));
  cache.emplace(path.string(), ptr);
  return ptr;
}

}  // namespace

void GenConfig::validate() const {
  if (grid_size < 8 || grid_size % 4 != 0) throw ConfigError("grid_size must be a multiple of 4, at least 8");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(cooccurrence_rate >= 0.0 && cooccurrence_rate <= 1.0)) throw ConfigError("cooccurrence_rate must lie in [0, 1]");
  if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite number >= 1");
  if (n_samples <= 0) throw ConfigError("n_samples must be positive");
  if (questions_per_image < 2 || questions_per_image > kNumTemplates) {
    throw ConfigError("questions_per_image must lie in [2, 6]");
  }
}

nlohmann::json to_json(const GenConfig& c) {
  return {{"grid_size", c.grid_size}, {"rho", c.rho},
          {"gamma", c.gamma},         {"cooccurrence_rate", c.cooccurrence_rate},
          {"n_samples", c.n_samples}, {"questions_per_image", c.questions_per_image},
          {"seed", c.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  GenConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "grid_size") c.grid_size = v.get<int>();
      else if (k == "rho") c.rho = v.get<double>();
      else if (k == "gamma") c.gamma = v.get<double>();
      else if (k == "cooccurrence_rate") c.cooccurrence_rate = v.get<double>();
      else if (k == "n_samples") c.n_samples = v.get<int>();
      else if (k == "questions_per_image") c.questions_per_image = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown generator key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::size_t> Dataset::siblings(std::size_t i) const {
  std::vector<std::size_t> out;
  const int id = samples.at(i).image_id;
  if (id < 0) return out;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (j != i && samples[j].image_id == id) out.push_back(j);
  }
  return out;
}

Scene sample_scene(const GenConfig& config, std::uint64_t index, int* confounder) {
  Rng rng = make_rng(config.seed, "scene", index);
  const auto prior = class_prior(config.gamma);
  const int c = categorical(rng, prior);
  const bool coupled = bernoulli(rng, config.rho);

  Scene s;
  s.grid = config.grid_size;
  PathologyFinding first;
  first.type = static_cast<Pathology>(coupled ? c : categorical(rng, prior));
  first.location = coupled ? kPreferredLocation[static_cast<std::size_t>(first.type)]
                           : static_cast<Quadrant>(uniform_index(rng, kNumQuadrants));
  s.modality = coupled ? kPreferredModality[static_cast<std::size_t>(c)]
                       : static_cast<Modality>(uniform_index(rng, kNumModalities));
  s.organs = organ_layout(static_cast<OrganType>(uniform_index(rng, kNumOrgans)), s.grid);
  first.intensity = 1 + static_cast<int>(uniform_index(rng, 3));
  first.cells = lesion_box(first.type, first.location, s.grid, rng);
  s.pathologies.push_back(first);

  if (bernoulli(rng, config.cooccurrence_rate)) {
    PathologyFinding second;
    const int p = static_cast<int>(first.type);
    // Under the confounder the partner lesion is fixed; otherwise any other type.
    const int partner = (p + 2) % kNumPathologies;
    second.type = static_cast<Pathology>(bernoulli(rng, config.rho)
                                             ? partner
                                             : (p + 1 + static_cast<int>(uniform_index(rng, kNumPathologies - 1))) %
                                                   kNumPathologies);
    const int q = static_cast<int>(first.location);
    second.location = static_cast<Quadrant>((q + 1 + static_cast<int>(uniform_index(rng, kNumQuadrants - 1))) % kNumQuadrants);
    second.intensity = 1 + static_cast<int>(uniform_index(rng, 3));
    second.cells = lesion_box(second.type, second.location, s.grid, rng);
    s.pathologies.push_back(second);
  }
  if (confounder) *confounder = c;
  return s;
}

Dataset generate_dataset(const GenConfig& config) {
  config.validate();
  const auto& vocab = Vocab::builtin();
  Dataset ds;
  ds.config = config;
  ds.samples.reserve(static_cast<std::size_t>(config.n_samples));
  for (std::uint64_t img = 0; static_cast<int>(ds.samples.size()) < config.n_samples; ++img) {
    int c = -1;
    Scene scene = sample_scene(config, img, &c);
    Rng render_rng = make_rng(config.seed, "render", img);
    auto image = std::make_shared<const Image>(render_image(scene, render_rng));

    Rng qrng = make_rng(config.seed, "question", img);
    std::array<int, kNumTemplates> order{};
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(qrng, i + 1)]);
    int asked = 0;
    for (int t : order) {
      if (asked == config.questions_per_image || static_cast<int>(ds.samples.size()) == config.n_samples) break;
      QaText qa;
      try {
        qa = make_question_answer(scene, static_cast<TemplateId>(t), qrng);
      } catch (const TemplateMismatch&) {
        continue;
      }
      VqaSample s;
      s.image = image;
      char ref[32];
      std::snprintf(ref, sizeof ref, "images/img_%06llu.pgm", static_cast<unsigned long long>(img));
      s.image_ref = ref;
      s.image_id = static_cast<int>(img);
      s.question = vocab.encode(qa.question);
      s.answer = vocab.encode(qa.answer);
      s.qtype = qtype_of(qa.parsed.id);
      s.scene = scene;
      s.confounder = c;
      ds.samples.push_back(std::move(s));
      ++asked;
    }
  }
  return ds;
}

SplitResult split(const Dataset& dataset, double train_frac, std::uint64_t seed, std::optional<double> test_rho) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  if (dataset.samples.empty()) throw ConfigError("cannot split an empty dataset");
  if (test_rho && !dataset.config) throw ConfigError("an OOD test split needs a generated dataset");
  if (test_rho && !(*test_rho >= 0.0 && *test_rho <= 1.0)) throw ConfigError("test rho must lie in [0, 1]");

  // Group by image so questions about one image never straddle the split.
  std::map<int, std::vector<std::size_t>> by_image;
  int next_free = -1;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const int id = dataset.samples[i].image_id;
    by_image[id >= 0 ? id : next_free--].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, members] : by_image) groups.push_back(&members);
  Rng rng = make_rng(seed, "split");
  for (std::size_t i = groups.size() - 1; i > 0; --i) std::swap(groups[i], groups[uniform_index(rng, i + 1)]);

  const auto n = dataset.samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::vector<std::size_t> train_idx, test_idx;
  for (const auto* g : groups) {
    auto& dst = train_idx.size() < n_train ? train_idx : test_idx;
    dst.insert(dst.end(), g->begin(), g->end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitResult out;
  out.train.config = dataset.config;
  for (auto i : train_idx) out.train.samples.push_back(dataset.samples[i]);
  if (test_rho) {
    GenConfig cfg = *dataset.config;
    cfg.rho = *test_rho;
    cfg.n_samples = static_cast<int>(n - train_idx.size());
    cfg.seed = derive_seed(dataset.config->seed, "ood-test", seed);
    if (cfg.n_samples > 0) out.test = generate_dataset(cfg);
  } else {
    out.test.config = dataset.config;
    for (auto i : test_idx) out.test.samples.push_back(dataset.samples[i]);
  }
  return out;
}

double pathology_location_mi(const Dataset& dataset) {
  std::array<std::array<double, kNumQuadrants>, kNumPathologies> joint{};
  std::map<int, bool> seen;
  double n = 0;
  for (const auto& s : dataset.samples) {
    if (!s.scene || s.scene->pathologies.empty()) continue;
    if (s.image_id >= 0 && !seen.emplace(s.image_id, true).second) continue;
    const auto& p = s.scene->pathologies.front();
    joint[static_cast<std::size_t>(p.type)][static_cast<std::size_t>(p.location)] += 1;
    n += 1;
  }
  if (n == 0) return 0.0;
  std::array<double, kNumPathologies> pp{};
  std::array<double, kNumQuadrants> pl{};
  for (std::size_t a = 0; a < kNumPathologies; ++a) {
    for (std::size_t b = 0; b < kNumQuadrants; ++b) {
      pp[a] += joint[a][b] / n;
      pl[b] += joint[a][b] / n;
    }
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < kNumPathologies; ++a) {
    for (std::size_t b = 0; b < kNumQuadrants; ++b) {
      const double pab = joint[a][b] / n;
      if (pab > 0) mi += pab * std::log(pab / (pp[a] * pl[b]));
    }
  }
  return std::max(mi, 0.0);
}

nlohmann::json dataset_to_json(const Dataset& ds, const std::filesystem::path& image_dir) {
  const auto& vocab = Vocab::builtin();
  nlohmann::json doc;
  doc["samples"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    nlohmann::json j;
    if (!image_dir.empty() || !s.image) {
      j["image"] = s.image_ref;
    } else {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < s.image->rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < s.image->cols(); ++c) row.push_back((*s.image)(r, c));
        rows.push_back(std::move(row));
      }
      j["image"] = std::move(rows);
    }
    j["question"] = vocab.decode(s.question);
    j["answer"] = vocab.decode(s.answer);
    j["qtype"] = name(s.qtype);
    if (s.image_id >= 0) j["image_id"] = s.image_id;
    if (s.scene) j["scene"] = scene_to_json(*s.scene);
    if (s.confounder >= 0) j["confounder"] = s.confounder;
    doc["samples"].push_back(std::move(j));
  }
  if (ds.config) doc["config"] = to_json(*ds.config);
  return doc;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, ImageStorage storage) {
  std::filesystem::create_directories(dir);
  if (storage == ImageStorage::kFiles) {
    std::map<std::string, const Image*> written;
    for (const auto& s : ds.samples) {
      if (!s.image || written.count(s.image_ref)) continue;
      const auto path = dir / s.image_ref;
      std::filesystem::create_directories(path.parent_path());
      write_pgm16(*s.image, path);
      written[s.image_ref] = s.image.get();
    }
  }
  const auto doc = dataset_to_json(ds, storage == ImageStorage::kFiles ? dir : std::filesystem::path{});
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
  out << doc.dump() << '\n';
}

Dataset dataset_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object() || !doc.contains("samples") || !doc["samples"].is_array()) {
    throw SchemaError("dataset document needs a 'samples' array");
  }
  const auto& vocab = Vocab::builtin();
  Dataset ds;
  if (doc.contains("config")) ds.config = gen_config_from_json(doc["config"]);
  std::map<std::string, std::shared_ptr<const Image>> cache;
  std::map<std::string, int> ids;
  for (const auto& j : doc["samples"]) {
    if (!j.is_object() || !j.contains("question") || !j.contains("answer")) {
      throw SchemaError("every sample needs 'question' and 'answer'");
    }
    VqaSample s;
    s.question = vocab.encode(json_text(j["question"]));
    s.answer = vocab.encode(json_text(j["answer"]));
    if (j.contains("qtype")) {
      auto q = qtype_from(json_text(j["qtype"]));
      if (!q) throw SchemaError("qtype must be 'open' or 'closed'");
      s.qtype = *q;
    }
    if (j.contains("image")) {
      const auto& im = j["image"];
      if (im.is_string()) {
        s.image_ref = im.get<std::string>();
        const auto path = base_dir / s.image_ref;
        if (std::filesystem::exists(path)) s.image = load_image_cached(path, 0, cache);
      } else if (im.is_array()) {
        const auto rows = static_cast<Eigen::Index>(im.size());
        const auto cols = rows ? static_cast<Eigen::Index>(im[0].size()) : 0;
        Image img(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
          if (static_cast<Eigen::Index>(im[r].size()) != cols) throw SchemaError("ragged image array");
          for (Eigen::Index c = 0; c < cols; ++c) img(r, c) = im[r][c].get<float>();
        }
        s.image = std::make_shared<const Image>(std::move(img));
      } else {
        throw SchemaError("'image' must be a path or a 2-D array");
      }
    }
    if (j.contains("image_id")) {
      s.image_id = j["image_id"].get<int>();
    } else if (!s.image_ref.empty()) {
      s.image_id = ids.emplace(s.image_ref, static_cast<int>(ids.size())).first->second;
    }
    // Inline images of one generated image share storage again.
    if (s.image && s.image_ref.empty() && s.image_id >= 0) {
      const auto key = "#" + std::to_string(s.image_id);
      auto it = cache.find(key);
      if (it != cache.end() && *it->second == *s.image) s.image = it->second;
      else cache[key] = s.image;
    }
    if (j.contains("scene")) s.scene = scene_from_json(j["scene"]);
    if (j.contains("confounder")) s.confounder = j["confounder"].get<int>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open dataset file " + file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return dataset_from_json(doc, file.parent_path());
}

Dataset load_external(const std::filesystem::path& file, const std::string& format, int grid_size) {
  std::string image_key, group_key;
  if (format == "slake-json") {
    image_key = "img_name";
    group_key = "img_id";
  } else if (format == "vqarad-json") {
    image_key = "image_name";
    group_key = "image_name";
  } else {
    throw ConfigError("unknown external format '" + format + "' (expected slake-json or vqarad-json)");
  }
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw SchemaError(file.string() + ": expected a list of records");

  const auto& vocab = Vocab::builtin();
  const auto base = file.parent_path();
  std::map<std::string, std::shared_ptr<const Image>> cache;
  std::map<std::string, int> groups;
  Dataset ds;
  for (const auto& r : doc) {
    if (!r.is_object()) throw SchemaError("record is not an object");
    if (!r.contains("question")) throw SchemaError("record missing 'question'");
    if (!r.contains("answer")) throw SchemaError("record missing 'answer'");
    if (r.contains("q_lang") && r["q_lang"].is_string() && r["q_lang"] != "en") continue;
    VqaSample s;
    s.question = vocab.encode(json_text(r["question"]));
    s.answer = vocab.encode(json_text(r["answer"]));
    // Records without an answer type are treated as open-ended.
    s.qtype = QType::kOpen;
    if (r.contains("answer_type")) {
      if (auto q = qtype_from(json_text(r["answer_type"]))) s.qtype = *q;
    }
    if (r.contains(image_key)) {
      s.image_ref = json_text(r[image_key]);
      for (const auto& candidate : {base / s.image_ref, base / "imgs" / s.image_ref, base / "images" / s.image_ref}) {
        if (!std::filesystem::is_regular_file(candidate)) continue;
        try {
          s.image = load_image_cached(candidate, grid_size, cache);
        } catch (const IoError&) {
          s.image.reset();
        }
        break;
      }
    }
    const std::string group = r.contains(group_key) ? json_text(r[group_key]) : s.image_ref;
    if (!group.empty()) s.image_id = groups.emplace(group, static_cast<int>(groups.size())).first->second;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cvqa::data
