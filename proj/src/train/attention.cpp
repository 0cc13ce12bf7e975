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

#include "cvqa/train/attention.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cvqa/data/image_io.hpp"
#include "cvqa/errors.hpp"

namespace cvqa::train {

namespace fs = std::filesystem;

nn::Matrix<double> cell_mass(const std::vector<double>& token_mass, int side) {
  if (static_cast<std::size_t>(side) * static_cast<std::size_t>(side) != token_mass.size()) {
    throw ShapeError("cell_mass: " + std::to_string(token_mass.size()) + " tokens do not fill a " +
                     std::to_string(side) + "x" + std::to_string(side) + " grid");
  }
  nn::Matrix<double> cells(side, side);
  double total = 0.0;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double v = std::max(0.0, token_mass[static_cast<std::size_t>(r * side + c)]);
      cells(r, c) = v;
      total += v;
    }
  }
  if (total <= 0.0) throw NonFiniteError("cell_mass: attention has no mass");
  return cells / total;
}

double region_mass(const nn::Matrix<double>& cells, const data::Scene& scene, int patch) {
  const double area = static_cast<double>(patch) * patch;
  double mass = 0.0;
  for (int r = 0; r < cells.rows(); ++r) {
    for (int c = 0; c < cells.cols(); ++c) {
      int inside = 0;
      for (int y = r * patch; y < (r + 1) * patch; ++y) {
        for (int x = c * patch; x < (c + 1) * patch; ++x) {
          for (const auto& p : scene.pathologies) {
            if (p.cells.contains(y, x)) {
              ++inside;
              break;
            }
          }
        }
      }
      mass += cells(r, c) * inside / area;
    }
  }
  return mass;
}

AttentionSet attention_maps(model::Model<float>& m, const model::Flags& flags, const PreparedSet& set,
                            int batch_size) {
  std::vector<PredictionRecord> records;
  evaluate(m, flags, set, batch_size, &records);
  const int side = m.config().grid / m.config().patch;
  AttentionSet out;
  for (const auto& r : records) {
    const auto& d = r.diagnostics;
    const bool cif = !d.cif_mass.empty();
    out.samples.push_back(r.sample);
    out.cells.push_back(cell_mass(cif ? d.cif_mass.front() : d.encoder_mass.front(), side));
    out.selected.push_back(d.selected.empty() ? std::vector<int>{} : d.selected.front());
  }
  return out;
}

double mean_region_mass(const AttentionSet& maps, const data::Dataset& ds, int patch) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < maps.samples.size(); ++k) {
    const auto& s = ds.samples.at(maps.samples[k]);
    if (!s.scene || s.scene->pathologies.empty()) continue;
    sum += region_mass(maps.cells[k], *s.scene, patch);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

void write_matrix_csv(const nn::Matrix<double>& m, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  char buf[32];
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      f << (c ? "," : "") << buf;
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

void write_heatmap(const nn::Matrix<double>& m, int patch, const fs::path& path) {
  const double peak = m.maxCoeff();
  data::Image img(m.rows() * patch, m.cols() * patch);
  for (int y = 0; y < img.rows(); ++y) {
    for (int x = 0; x < img.cols(); ++x) {
      img(y, x) = peak > 0.0 ? static_cast<float>(m(y / patch, x / patch) / peak) : 0.0f;
    }
  }
  data::write_png(img, path);
}

}  // namespace

ExportSummary export_attention(const fs::path& cif_checkpoint, const fs::path& plain_checkpoint,
                               const data::Dataset& ds, std::span<const std::size_t> samples, const fs::path& out_dir) {
  auto cif = load_trained(cif_checkpoint);
  if (!cif.config.flags.use_cif) throw ConfigError("checkpoint " + cif_checkpoint.string() + " was trained without CIF");
  std::optional<LoadedModel> plain;
  if (!plain_checkpoint.empty()) plain = load_trained(plain_checkpoint);

  // Restrict the dataset to the requested samples, keeping their siblings for prompts.
  for (std::size_t i : samples) {
    if (i >= ds.size()) throw RangeError("sample index " + std::to_string(i) + " out of range");
  }
  auto cif_set = prepare(ds, cif.config);
  auto keep = [&](PreparedSet& p) {
    std::set<std::size_t> wanted(samples.begin(), samples.end());
    PreparedSet out;
    out.dataset = p.dataset;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (!wanted.count(p.index[k])) continue;
      out.index.push_back(p.index[k]);
      out.prompts.push_back(p.prompts[k]);
      out.answers.push_back(p.answers[k]);
      out.type_keys.push_back(p.type_keys[k]);
    }
    for (std::size_t k = 0; k < out.index.size(); ++k) {
      const auto& s = ds.samples[out.index[k]];
      auto ex = p.examples.front();
      ex.image = s.image.get();
      ex.question = &s.question;
      ex.prompt = &out.prompts[k];
      ex.answer = &out.answers[k];
      ex.qtype = data::QType::kOpen;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p.index[j] == out.index[k]) ex.qtype = p.examples[j].qtype;
      }
      out.examples.push_back(ex);
    }
    return out;
  };
  auto cif_sel = keep(cif_set);
  if (cif_sel.size() == 0) throw IoError("no exportable samples (missing images?)");

  // One sample per forward pass: the maps must not depend on batch neighbours.
  auto maps_cif = attention_maps(*cif.model, cif.config.flags, cif_sel, 1);
  AttentionSet maps_plain;
  if (plain) {
    auto plain_set = prepare(ds, plain->config);
    auto plain_sel = keep(plain_set);
    model::Flags off;
    off.use_cif = false;
    off.use_fda = false;
    off.use_pm = plain->config.flags.use_pm;
    maps_plain = attention_maps(*plain->model, off, plain_sel, 1);
  } else {
    model::Flags off;
    off.use_cif = false;
    off.use_fda = false;
    off.use_pm = cif.config.flags.use_pm;
    maps_plain = attention_maps(*cif.model, off, cif_sel, 1);
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const int patch = cif.config.model.patch;
  for (std::size_t k = 0; k < maps_cif.samples.size(); ++k) {
    const std::string base = "sample_" + std::to_string(maps_cif.samples[k]);
    write_matrix_csv(maps_cif.cells[k], out_dir / (base + "_cif.csv"));
    write_heatmap(maps_cif.cells[k], patch, out_dir / (base + "_cif.png"));
    write_matrix_csv(maps_plain.cells[k], out_dir / (base + "_plain.csv"));
    write_heatmap(maps_plain.cells[k], patch, out_dir / (base + "_plain.png"));
    std::ofstream f(out_dir / (base + "_topk.csv"));
    if (!f) throw IoError("cannot write " + (out_dir / (base + "_topk.csv")).string());
    f << "rank,token,row,col\n";
    const int side = static_cast<int>(maps_cif.cells[k].rows());
    for (std::size_t r = 0; r < maps_cif.selected[k].size(); ++r) {
      const int t = maps_cif.selected[k][r];
      f << r << ',' << t << ',' << t / side << ',' << t % side << '\n';
    }
  }
  ExportSummary summary;
  summary.exported = maps_cif.samples.size();
  summary.region_mass_cif = mean_region_mass(maps_cif, ds, patch);
  summary.region_mass_plain = mean_region_mass(maps_plain, ds, patch);
  return summary;
}

}  // namespace cvqa::train
