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

#include <json.hpp>

#include "cvqa/nn/tensor.hpp"

namespace cvqa::nn {

/// A checkpoint is a pair of files sharing a stem: `<stem>.bin` holds every
/// tensor as consecutive little-endian values in store order, `<stem>.json`
/// lists name, shape, dtype and element offset of each tensor plus free-form
/// metadata.
template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::filesystem::path& stem,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Overwrites values of `store` by name. Every store tensor must be present
/// with the same shape; the file's element type may differ from T.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::filesystem::path& stem);

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& stem);

}  // namespace cvqa::nn
