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

#include "cvqa/train/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cvqa/errors.hpp"

namespace cvqa::train {

namespace fs = std::filesystem;

std::vector<Arm> ablation_arms() {
  std::vector<Arm> arms;
  for (auto [cif, fda, pm] : {std::tuple{false, false, false}, std::tuple{false, false, true},
                              std::tuple{true, true, false}, std::tuple{true, true, true},
                              std::tuple{true, false, false}}) {
    model::Flags f;
    f.use_cif = cif;
    f.use_fda = fda;
    f.use_pm = pm;
    arms.push_back({f.arm_name(), f});
  }
  return arms;
}

namespace {

const char* const kMetricNames[] = {"accuracy_open", "accuracy_closed", "accuracy_overall", "bleu1", "f1"};

double metric(const Metrics& m, const std::string& name) {
  if (name == "accuracy_open") return m.accuracy_open;
  if (name == "accuracy_closed") return m.accuracy_closed;
  if (name == "accuracy_overall") return m.accuracy_overall;
  if (name == "bleu1") return m.bleu1;
  return m.f1;
}

double causal_sum(const fs::path& log) {
  std::ifstream f(log);
  if (!f) throw IoError("cannot read " + log.string());
  std::string line;
  std::getline(f, line);
  double sum = 0.0;
  while (std::getline(f, line)) {
    // step,epoch,lr,loss_closed,loss_open,loss_causal,...
    std::size_t pos = 0;
    for (int k = 0; k < 5; ++k) pos = line.find(',', pos) + 1;
    sum += std::stod(line.substr(pos));
  }
  return sum;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

AblationResult ablate(const TrainConfig& base, std::span<const std::uint64_t> seeds, const data::Dataset& train_set,
                      const data::Dataset& test_set, const fs::path& out_dir, std::span<const Arm> arms,
                      const RunProgressFn& progress) {
  base.validate();
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto all = ablation_arms();
  if (arms.empty()) arms = all;
  AblationResult result;
  for (const auto& arm : arms) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base;
      c.flags = arm.flags;
      c.seed = seed;
      const fs::path dir = out_dir / arm.name / ("seed_" + std::to_string(seed));
      auto trained = train(c, train_set, nullptr, dir);
      RunResult r;
      r.arm = arm.name;
      r.flags = arm.flags;
      r.seed = seed;
      r.checkpoint = trained.last;
      r.metrics = evaluate(trained.last, test_set);
      r.causal_loss_sum = causal_sum(dir / "train_log.csv");
      std::ofstream(dir / "metrics.json") << to_json(r.metrics).dump(2) << '\n';
      result.runs.push_back(r);
      if (progress) progress(r);
    }
  }
  result.summary = summarize(result.runs);
  write_ablation_csv(result.summary, out_dir / "ablation.csv");
  write_runs_csv(result.runs, out_dir / "runs.csv");
  return result;
}

std::vector<ArmSummary> summarize(std::span<const RunResult> runs) {
  std::vector<ArmSummary> out;
  for (const auto& r : runs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ArmSummary& s) { return s.arm == r.arm; });
    if (it == out.end()) {
      out.push_back({r.arm, r.flags, 0, {}});
      it = std::prev(out.end());
    }
    ++it->seeds;
  }
  for (auto& s : out) {
    for (const char* name : kMetricNames) {
      std::vector<double> v;
      for (const auto& r : runs) {
        if (r.arm == s.arm) v.push_back(metric(r.metrics, name));
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      s.mean_sd.push_back({name, {mean, sd}});
    }
  }
  return out;
}

void write_ablation_csv(std::span<const ArmSummary> summary, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "arm,use_cif,use_fda,use_pm,seeds";
  for (const char* name : kMetricNames) f << ',' << name << "_mean," << name << "_sd";
  f << '\n';
  for (const auto& s : summary) {
    f << s.arm << ',' << s.flags.use_cif << ',' << s.flags.use_fda << ',' << s.flags.use_pm << ',' << s.seeds;
    for (const auto& [name, ms] : s.mean_sd) f << ',' << fmt(ms.first) << ',' << fmt(ms.second);
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

void write_runs_csv(std::span<const RunResult> runs, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "arm,seed";
  for (const char* name : kMetricNames) f << ',' << name;
  f << ",causal_loss_sum,checkpoint\n";
  for (const auto& r : runs) {
    f << r.arm << ',' << r.seed;
    for (const char* name : kMetricNames) f << ',' << fmt(metric(r.metrics, name));
    f << ',' << fmt(r.causal_loss_sum) << ',' << r.checkpoint.string() << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

double sign_test_p(int wins, int n) {
  if (n < 0 || wins < 0 || wins > n) throw RangeError("sign test needs 0 <= wins <= n");
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    p += c;
  }
  return p * std::pow(0.5, n);
}

}  // namespace cvqa::train
