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

#include "cvqa/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cvqa/errors.hpp"

namespace cvqa::nn {
namespace {

template <typename U>
void put_le(std::ostream& out, U bits) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(const unsigned char* p) {
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return bits;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::filesystem::path& stem,
                     const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["dtype"] = dtype_name(dtype_of<T>());
  manifest["metadata"] = metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + with_ext(stem, ".bin").string());
  std::size_t offset = 0;
  for (const auto& p : store) {
    manifest["tensors"].push_back({{"name", p.name},
                                   {"shape", {p.value.rows(), p.value.cols()}},
                                   {"offset", offset},
                                   {"trainable", p.trainable},
                                   {"decay", p.decay}});
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if constexpr (sizeof(T) == 4) {
        put_le(bin, std::bit_cast<std::uint32_t>(p.value.data()[i]));
      } else {
        put_le(bin, std::bit_cast<std::uint64_t>(p.value.data()[i]));
      }
    }
    offset += static_cast<std::size_t>(p.value.size());
  }
  manifest["count"] = offset;
  if (!bin) throw IoError("short write to " + with_ext(stem, ".bin").string());
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  if (!js) throw IoError("cannot write " + with_ext(stem, ".json").string());
  js << manifest.dump(2) << '\n';
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& stem) {
  std::ifstream js(with_ext(stem, ".json"));
  if (!js) throw IoError("cannot open checkpoint manifest " + with_ext(stem, ".json").string());
  try {
    return nlohmann::json::parse(js);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(with_ext(stem, ".json").string() + ": " + e.what());
  }
}

template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::filesystem::path& stem) {
  const auto manifest = read_checkpoint_manifest(stem);
  const std::string dtype = manifest.value("dtype", "");
  std::size_t width = 0;
  if (dtype == "float32") {
    width = 4;
  } else if (dtype == "float64") {
    width = 8;
  } else {
    throw SchemaError("checkpoint dtype '" + dtype + "' not recognised");
  }
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError("cannot open checkpoint data " + with_ext(stem, ".bin").string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t count = manifest.value("count", std::size_t{0});
  if (raw.size() != count * width) throw SchemaError("checkpoint data size does not match its manifest");

  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  for (auto& p : store) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw SchemaError("checkpoint lacks tensor '" + p.name + "'");
    const auto shape = it->second.at("shape").template get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw ShapeError("checkpoint tensor '" + p.name + "' has a different shape");
    }
    const auto offset = it->second.at("offset").template get<std::size_t>();
    if ((offset + static_cast<std::size_t>(p.value.size())) > count) {
      throw SchemaError("checkpoint tensor '" + p.name + "' runs past the data");
    }
    const unsigned char* src = raw.data() + offset * width;
    for (Eigen::Index i = 0; i < p.value.size(); ++i, src += width) {
      if (width == 4) {
        p.value.data()[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(src)));
      } else {
        p.value.data()[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(src)));
      }
    }
  }
}

template void save_checkpoint(const ParameterStore<float>&, const std::filesystem::path&, const nlohmann::json&);
template void save_checkpoint(const ParameterStore<double>&, const std::filesystem::path&, const nlohmann::json&);
template void load_checkpoint(ParameterStore<float>&, const std::filesystem::path&);
template void load_checkpoint(ParameterStore<double>&, const std::filesystem::path&);

}  // namespace cvqa::nn
