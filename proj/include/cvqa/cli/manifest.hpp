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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cvqa::cli {

/// Git blob id of a file's bytes: SHA-1 over "blob <size>\0" + content, as hex.
std::string git_blob_sha1(const std::filesystem::path& file);
std::string git_blob_sha1_bytes(const std::string& bytes);

struct DatasetRef {
  std::string role;
  std::filesystem::path path;
  std::string sha1;
};

/// Record of one CLI run. Written when the run starts and rewritten when it
/// ends, as <output_dir>/manifest.json.
struct RunManifest {
  std::string subcommand;
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir;
  std::string started, finished;
  std::string status = "running";
  int exit_code = -1;
  std::string message;
  std::vector<DatasetRef> datasets;
  std::vector<std::string> argv;
  nlohmann::json config;

  /// Hash of the first dataset, or of all of them joined when several.
  std::string dataset_hash() const;
  nlohmann::json to_json() const;
  void write() const;  // IoError
};

/// Current UTC time, ISO 8601 with seconds.
std::string utc_now();

}  // namespace cvqa::cli
