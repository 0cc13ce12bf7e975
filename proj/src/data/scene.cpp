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

#include "cvqa/data/scene.hpp"

#include <algorithm>
#include <cmath>

#include "cvqa/errors.hpp"

namespace cvqa::data {
namespace {

constexpr std::array<const char*, kNumModalities> kModalityNames{"xray", "ct", "mri"};
constexpr std::array<const char*, kNumOrgans> kOrganNames{"lung", "heart", "liver"};
constexpr std::array<const char*, kNumPathologies> kPathologyNames{"effusion", "infiltration", "nodule", "mass"};
constexpr std::array<const char*, 3> kSideNames{"left", "right", "center"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<const char*, N>& names, const std::string& word) {
  for (std::size_t i = 0; i < N; ++i) {
    if (word == names[i]) return static_cast<E>(i);
  }
  return std::nullopt;
}

// Lesion footprint (rows, cols) per pathology.
constexpr std::array<std::array<int, 2>, kNumPathologies> kLesionSize{{{4, 10}, {8, 8}, {3, 3}, {7, 7}}};

constexpr float kOrganLevel = 0.2f;
constexpr float kSignatureLevel = 0.3f;

float lesion_level(int intensity) { return 0.35f + 0.15f * static_cast<float>(intensity); }

void paint(Image& img, int r, int c, float v) {
  if (r >= 0 && c >= 0 && r < img.rows() && c < img.cols()) img(r, c) = std::max(img(r, c), v);
}

void paint_ellipse(Image& img, const CellBox& b, float v) {
  const double cr = 0.5 * (b.r0 + b.r1 - 1), cc = 0.5 * (b.c0 + b.c1 - 1);
  const double ar = 0.5 * (b.r1 - b.r0), ac = 0.5 * (b.c1 - b.c0);
  for (int r = b.r0; r < b.r1; ++r) {
    for (int c = b.c0; c < b.c1; ++c) {
      const double dr = (r - cr) / ar, dc = (c - cc) / ac;
      if (dr * dr + dc * dc <= 1.0) paint(img, r, c, v);
    }
  }
}

}  // namespace

const char* name(Modality m) { return kModalityNames[static_cast<std::size_t>(m)]; }
const char* name(OrganType o) { return kOrganNames[static_cast<std::size_t>(o)]; }
const char* name(Pathology p) { return kPathologyNames[static_cast<std::size_t>(p)]; }
const char* name(Side s) { return kSideNames[static_cast<std::size_t>(s)]; }

std::string name(Quadrant q) {
  const bool left = q == Quadrant::kLeftUpper || q == Quadrant::kLeftLower;
  const bool upper = q == Quadrant::kLeftUpper || q == Quadrant::kRightUpper;
  return std::string(left ? "left" : "right") + (upper ? " upper" : " lower");
}

Side side_of(Quadrant q) {
  return (q == Quadrant::kLeftUpper || q == Quadrant::kLeftLower) ? Side::kLeft : Side::kRight;
}

std::optional<Modality> modality_from(const std::string& word) { return lookup<Modality>(kModalityNames, word); }
std::optional<OrganType> organ_from(const std::string& word) { return lookup<OrganType>(kOrganNames, word); }
std::optional<Pathology> pathology_from(const std::string& word) {
  return lookup<Pathology>(kPathologyNames, word);
}

CellBox quadrant_box(Quadrant q, int grid) {
  const int h = grid / 2;
  switch (q) {
    case Quadrant::kLeftUpper: return {0, 0, h, h};
    case Quadrant::kRightUpper: return {0, h, h, grid};
    case Quadrant::kLeftLower: return {h, 0, grid, h};
    case Quadrant::kRightLower: return {h, h, grid, grid};
  }
  return {};
}

bool Scene::has_organ(OrganType o) const {
  return std::any_of(organs.begin(), organs.end(), [o](const OrganRegion& r) { return r.organ == o; });
}

const PathologyFinding* Scene::find(Pathology p) const {
  for (const auto& f : pathologies) {
    if (f.type == p) return &f;
  }
  return nullptr;
}

void Scene::validate() const {
  if (grid < 8 || grid % 4 != 0) throw ConfigError("scene grid must be a multiple of 4 and at least 8");
  auto inside = [this](const CellBox& b) {
    return b.r0 >= 0 && b.c0 >= 0 && b.r1 <= grid && b.c1 <= grid && b.r0 < b.r1 && b.c0 < b.c1;
  };
  for (const auto& o : organs) {
    if (!inside(o.cells)) throw ConfigError(std::string("organ region of ") + name(o.organ) + " leaves the grid");
    const bool left_half = o.cells.c1 <= grid / 2, right_half = o.cells.c0 >= grid / 2;
    if ((o.side == Side::kLeft && !left_half) || (o.side == Side::kRight && !right_half) ||
        (o.side == Side::kCenter && (left_half || right_half))) {
      throw ConfigError(std::string("organ side of ") + name(o.organ) + " contradicts its region");
    }
  }
  std::array<bool, kNumQuadrants> used{};
  for (const auto& p : pathologies) {
    const auto qi = static_cast<std::size_t>(p.location);
    if (used[qi]) throw ConfigError("two pathologies share the " + name(p.location) + " region");
    used[qi] = true;
    if (p.intensity < 1 || p.intensity > 3) throw ConfigError("pathology intensity must be 1..3");
    const auto q = quadrant_box(p.location, grid);
    if (!inside(p.cells) || p.cells.r0 < q.r0 || p.cells.c0 < q.c0 || p.cells.r1 > q.r1 || p.cells.c1 > q.c1) {
      throw ConfigError(std::string("lesion box of ") + name(p.type) + " leaves its region");
    }
  }
}

std::vector<OrganRegion> organ_layout(OrganType organ, int grid) {
  const double s = grid / 32.0;
  auto box = [s](int r0, int c0, int r1, int c1) {
    return CellBox{static_cast<int>(r0 * s), static_cast<int>(c0 * s), static_cast<int>(r1 * s), static_cast<int>(c1 * s)};
  };
  switch (organ) {
    case OrganType::kLung:
      return {{organ, Side::kLeft, box(3, 3, 17, 13)}, {organ, Side::kRight, box(3, 19, 17, 29)}};
    case OrganType::kHeart: return {{organ, Side::kCenter, box(12, 11, 22, 21)}};
    case OrganType::kLiver: return {{organ, Side::kRight, box(18, 18, 28, 29)}};
  }
  return {};
}

CellBox lesion_box(Pathology p, Quadrant q, int grid, Rng& rng) {
  const auto qb = quadrant_box(q, grid);
  const int h = std::min(kLesionSize[static_cast<std::size_t>(p)][0], qb.r1 - qb.r0 - 2);
  const int w = std::min(kLesionSize[static_cast<std::size_t>(p)][1], qb.c1 - qb.c0 - 2);
  const int r0 = qb.r0 + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(qb.r1 - qb.r0 - 2 - h + 1)));
  const int c0 = qb.c0 + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(qb.c1 - qb.c0 - 2 - w + 1)));
  return {r0, c0, r0 + h, c0 + w};
}

Image render_image(const Scene& scene, Rng& rng) {
  const int g = scene.grid;
  Image img = Image::Zero(g, g);
  if (scene.modality == Modality::kCt) {
    const double c = 0.5 * (g - 1), radius = 0.45 * g;
    for (int r = 0; r < g; ++r) {
      for (int col = 0; col < g; ++col) {
        if (std::abs(std::hypot(r - c, col - c) - radius) < 0.6) paint(img, r, col, kSignatureLevel);
      }
    }
  } else if (scene.modality == Modality::kMri) {
    for (int col = 0; col < g; ++col) {
      paint(img, 0, col, kSignatureLevel);
      paint(img, g - 1, col, kSignatureLevel);
    }
  }
  for (const auto& o : scene.organs) paint_ellipse(img, o.cells, kOrganLevel);
  for (const auto& p : scene.pathologies) {
    const float v = lesion_level(p.intensity);
    const auto& b = p.cells;
    switch (p.type) {
      case Pathology::kEffusion:
        for (int r = b.r0; r < b.r1; ++r) {
          for (int c = b.c0; c < b.c1; ++c) paint(img, r, c, v);
        }
        break;
      case Pathology::kInfiltration:
        for (int r = b.r0; r < b.r1; ++r) {
          for (int c = b.c0; c < b.c1; ++c) {
            if ((r + c) % 2 == 0) paint(img, r, c, v);
          }
        }
        break;
      case Pathology::kNodule:
      case Pathology::kMass: paint_ellipse(img, b, v); break;
    }
  }
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const double x = img.data()[i] + kNoiseSigma * standard_normal(rng);
    img.data()[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return img;
}

nlohmann::json scene_to_json(const Scene& s) {
  auto box = [](const CellBox& b) { return nlohmann::json::array({b.r0, b.c0, b.r1, b.c1}); };
  nlohmann::json j;
  j["grid"] = s.grid;
  j["modality"] = name(s.modality);
  j["organs"] = nlohmann::json::array();
  for (const auto& o : s.organs) j["organs"].push_back({{"organ", name(o.organ)}, {"side", name(o.side)}, {"cells", box(o.cells)}});
  j["pathologies"] = nlohmann::json::array();
  for (const auto& p : s.pathologies) {
    j["pathologies"].push_back({{"type", name(p.type)},
                                {"location", name(p.location)},
                                {"intensity", p.intensity},
                                {"cells", box(p.cells)}});
  }
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  try {
    auto box = [](const nlohmann::json& a) {
      return CellBox{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>(), a.at(3).get<int>()};
    };
    Scene s;
    s.grid = j.at("grid").get<int>();
    auto m = modality_from(j.at("modality").get<std::string>());
    if (!m) throw SchemaError("unknown modality in scene");
    s.modality = *m;
    for (const auto& o : j.at("organs")) {
      auto organ = organ_from(o.at("organ").get<std::string>());
      auto side = lookup<Side>(kSideNames, o.at("side").get<std::string>());
      if (!organ || !side) throw SchemaError("unknown organ or side in scene");
      s.organs.push_back({*organ, *side, box(o.at("cells"))});
    }
    for (const auto& p : j.at("pathologies")) {
      auto type = pathology_from(p.at("type").get<std::string>());
      if (!type) throw SchemaError("unknown pathology in scene");
      std::optional<Quadrant> loc;
      for (int q = 0; q < kNumQuadrants; ++q) {
        if (name(static_cast<Quadrant>(q)) == p.at("location").get<std::string>()) loc = static_cast<Quadrant>(q);
      }
      if (!loc) throw SchemaError("unknown pathology location in scene");
      s.pathologies.push_back({*type, *loc, p.at("intensity").get<int>(), box(p.at("cells"))});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed scene: ") + e.what());
  }
}

}  // namespace cvqa::data
