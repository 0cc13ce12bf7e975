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

#include "cvqa/scm/io.hpp"

#include <cmath>
#include <fstream>

#include "cvqa/errors.hpp"

namespace cvqa::scm {
namespace {

void flatten(const nlohmann::json& node, std::vector<double>& out, const std::string& name) {
  if (node.is_number()) {
    out.push_back(node.get<double>());
  } else if (node.is_array()) {
    for (const auto& child : node) flatten(child, out, name);
  } else {
    throw ParseError("CPT for '" + name + "' must contain only numbers and arrays");
  }
}

// Re-nests a flat CPT with dimensions (parent cards..., own card).
nlohmann::json nest(const std::vector<double>& flat, const std::vector<int>& dims, std::size_t depth,
                    std::size_t& cursor) {
  nlohmann::json arr = nlohmann::json::array();
  for (int k = 0; k < dims[depth]; ++k) {
    if (depth + 1 == dims.size()) {
      arr.push_back(flat[cursor++]);
    } else {
      arr.push_back(nest(flat, dims, depth + 1, cursor));
    }
  }
  return arr;
}

}  // namespace

ScmSpec spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("variables") || !doc["variables"].is_array()) {
    throw ParseError("SCM document needs a 'variables' array");
  }
  ScmSpec spec;
  for (const auto& v : doc["variables"]) {
    if (!v.is_object() || !v.contains("name") || !v.contains("card") || !v["name"].is_string() ||
        !v["card"].is_number_integer()) {
      throw ParseError("each variable needs a string 'name' and an integer 'card'");
    }
    spec.variables.push_back({v["name"].get<std::string>(), v["card"].get<int>()});
  }
  if (doc.contains("parents")) {
    if (!doc["parents"].is_object()) throw ParseError("'parents' must be an object");
    for (const auto& [child, ps] : doc["parents"].items()) {
      if (!ps.is_array()) throw ParseError("parents of '" + child + "' must be an array");
      auto& list = spec.parents[child];
      for (const auto& p : ps) {
        if (!p.is_string()) throw ParseError("parent names must be strings");
        list.push_back(p.get<std::string>());
      }
    }
  }
  if (!doc.contains("cpts") || !doc["cpts"].is_object()) {
    throw ParseError("SCM document needs a 'cpts' object");
  }
  for (const auto& [name, table] : doc["cpts"].items()) {
    flatten(table, spec.cpts[name], name);
  }
  return spec;
}

nlohmann::json spec_to_json(const ScmSpec& spec) {
  nlohmann::json doc;
  doc["variables"] = nlohmann::json::array();
  std::map<std::string, int> cards;
  for (const auto& v : spec.variables) {
    doc["variables"].push_back({{"name", v.name}, {"card", v.card}});
    cards[v.name] = v.card;
  }
  doc["parents"] = nlohmann::json::object();
  doc["cpts"] = nlohmann::json::object();
  for (const auto& v : spec.variables) {
    std::vector<int> dims;
    auto it = spec.parents.find(v.name);
    const std::vector<std::string> ps = it == spec.parents.end() ? std::vector<std::string>{} : it->second;
    doc["parents"][v.name] = ps;
    for (const auto& p : ps) dims.push_back(cards.at(p));
    dims.push_back(v.card);
    std::size_t cursor = 0;
    doc["cpts"][v.name] = nest(spec.cpts.at(v.name), dims, 0, cursor);
  }
  return doc;
}

ScmSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open SCM file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return spec_from_json(doc);
}

ScmSpec random_vqa_spec(Rng& rng, const FuzzOptions& options) {
  auto card = [&] { return 2 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(options.max_card - 1))); };
  ScmSpec spec;
  spec.variables = {{"C", card()},   {"C_i", card()}, {"C_q", card()}, {"I", card()},
                    {"Q", card()},   {"M_i", card()}, {"M_q", card()}, {"A", card()}};
  spec.parents = {{"C", {}},
                  {"C_i", options.confound_inputs ? std::vector<std::string>{"C"} : std::vector<std::string>{}},
                  {"C_q", options.confound_inputs ? std::vector<std::string>{"C"} : std::vector<std::string>{}},
                  {"I", {"C_i"}},
                  {"Q", {"C_q"}},
                  {"M_i", {"I"}},
                  {"M_q", options.mediator_link ? std::vector<std::string>{"Q", "M_i"} : std::vector<std::string>{"Q"}},
                  {"A", {"C", "M_i", "M_q"}}};

  std::map<std::string, int> cards;
  for (const auto& v : spec.variables) cards[v.name] = v.card;
  for (const auto& v : spec.variables) {
    std::size_t rows = 1;
    for (const auto& p : spec.parents[v.name]) rows *= static_cast<std::size_t>(cards[p]);
    auto& cpt = spec.cpts[v.name];
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> row(static_cast<std::size_t>(v.card));
      double sum = 0.0;
      for (auto& x : row) {
        // Smaller concentration gives more peaked rows; the floor keeps every
        // entry strictly positive.
        x = std::pow(1.0 - uniform01(rng), 1.0 / options.concentration) + 1e-3;
        sum += x;
      }
      for (auto& x : row) x /= sum;
      cpt.insert(cpt.end(), row.begin(), row.end());
    }
  }
  return spec;
}

}  // namespace cvqa::scm
