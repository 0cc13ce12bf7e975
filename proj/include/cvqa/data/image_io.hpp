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

#include <filesystem>

#include "cvqa/data/scene.hpp"

namespace cvqa::data {

/// 16-bit binary PGM. Values are clamped to [0, 1] and quantized to 1/65535.
void write_pgm16(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

/// 8-bit grayscale PNG of values in [0, 1].
void write_png(const Image& img, const std::filesystem::path& path);
/// Any PNG, converted to grayscale in [0, 1].
Image read_png(const std::filesystem::path& path);

/// Area-average (or nearest, when enlarging) resampling to size x size.
Image resample(const Image& img, int size);

/// Reads .png or .pgm by extension. Throws IoError.
Image read_image(const std::filesystem::path& path);

}  // namespace cvqa::data
