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

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvqa/nn/tensor.hpp"
#include "cvqa/rng.hpp"

namespace cvqa::data {

enum class Modality { kXray, kCt, kMri };
enum class OrganType { kLung, kHeart, kLiver };
enum class Pathology { kEffusion, kInfiltration, kNodule, kMass };
enum class Side { kLeft, kRight, kCenter };
/// Image quadrants. Left/right refer to image columns, upper/lower to rows.
enum class Quadrant { kLeftUpper, kRightUpper, kLeftLower, kRightLower };

inline constexpr int kNumModalities = 3;
inline constexpr int kNumOrgans = 3;
inline constexpr int kNumPathologies = 4;
inline constexpr int kNumQuadrants = 4;

const char* name(Modality m);
const char* name(OrganType o);
const char* name(Pathology p);
const char* name(Side s);
/// "left upper", "right lower", ...
std::string name(Quadrant q);
Side side_of(Quadrant q);

std::optional<Modality> modality_from(const std::string& word);
std::optional<OrganType> organ_from(const std::string& word);
std::optional<Pathology> pathology_from(const std::string& word);

/// Inclusive-exclusive cell box [r0, r1) x [c0, c1).
struct CellBox {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  bool contains(int r, int c) const { return r >= r0 && r < r1 && c >= c0 && c < c1; }
  int area() const { return (r1 - r0) * (c1 - c0); }
};

/// Cells of a quadrant on a grid of side `grid`.
CellBox quadrant_box(Quadrant q, int grid);

struct OrganRegion {
  OrganType organ = OrganType::kLung;
  Side side = Side::kCenter;
  CellBox cells;
};

struct PathologyFinding {
  Pathology type = Pathology::kEffusion;
  Quadrant location = Quadrant::kLeftUpper;
  /// 1..3
  int intensity = 1;
  /// Bounding box of the rendered lesion, inside the location quadrant.
  CellBox cells;
};

/// Latent ground truth of one generated image.
struct Scene {
  int grid = 32;
  Modality modality = Modality::kXray;
  std::vector<OrganRegion> organs;
  std::vector<PathologyFinding> pathologies;

  bool has_organ(OrganType o) const;
  const PathologyFinding* find(Pathology p) const;
  /// Throws ConfigError when regions leave the grid, two pathologies share a
  /// quadrant, a lesion box leaves its quadrant or sides contradict geometry.
  void validate() const;
};

/// Organ layout used by the generator: lungs are two upper side regions,
/// the heart is central, the liver sits right-lower.
std::vector<OrganRegion> organ_layout(OrganType organ, int grid);

/// Lesion box for a pathology placed in `q`, jittered inside the quadrant.
CellBox lesion_box(Pathology p, Quadrant q, int grid, Rng& rng);

using Image = nn::Matrix<float>;

/// Organs as low-intensity blobs, lesions as high-intensity blobs, a modality
/// signature (ct: body ring, mri: top and bottom bars), additive N(0, 0.05^2)
/// noise and clamping to [0, 1].
Image render_image(const Scene& scene, Rng& rng);

inline constexpr double kNoiseSigma = 0.05;

nlohmann::json scene_to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);

}  // namespace cvqa::data
