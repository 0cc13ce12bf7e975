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

#include "cvqa/cli/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <memory>

#include "cvqa/errors.hpp"

namespace cvqa::cli {

namespace fs = std::filesystem;

std::string git_blob_sha1_bytes(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw IoError("SHA-1 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string git_blob_sha1(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot read " + file.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return git_blob_sha1_bytes(bytes);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::dataset_hash() const {
  if (datasets.empty()) return "";
  if (datasets.size() == 1) return datasets.front().sha1;
  std::string joined;
  for (const auto& d : datasets) joined += d.role + ' ' + d.sha1 + '\n';
  return git_blob_sha1_bytes(joined);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : datasets) ds.push_back({{"role", d.role}, {"path", d.path.string()}, {"sha1", d.sha1}});
  return {{"subcommand", subcommand},
          {"config_path", config_path.string()},
          {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
          {"output_dir", output_dir.string()},
          {"started", started},
          {"finished", finished.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished)},
          {"status", status},
          {"exit_code", exit_code},
          {"message", message},
          {"dataset_hash", dataset_hash()},
          {"datasets", ds},
          {"argv", argv},
          {"config", config}};
}

void RunManifest::write() const {
  const auto path = output_dir / "manifest.json";
  const auto tmp = output_dir / "manifest.json.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << to_json().dump(2) << '\n';
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

}  // namespace cvqa::cli
