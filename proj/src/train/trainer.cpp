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

#include "cvqa/train/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "cvqa/errors.hpp"
#include "cvqa/nn/checkpoint.hpp"
#include "cvqa/prompt/prompt.hpp"
#include "cvqa/train/optim.hpp"

namespace cvqa::train {

namespace fs = std::filesystem;
using model::Flags;

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  need(lr_init > lr_final && lr_final > 0.0, "need lr_init > lr_final > 0");
  need(weight_decay >= 0.0, "weight_decay must be non-negative");
  need(epochs >= 1, "epochs must be at least 1");
  need(batch_size >= 2, "batch_size must be at least 2");
  need(prompt_pairs >= 1 && prompt_pairs <= prompt::kMaxPairs, "prompt_pairs must lie in [1, 3]");
  need(prompt_noise >= 0.0 && prompt_noise <= 1.0, "prompt_noise must lie in [0, 1]");
  need(clip_norm >= 0.0, "clip_norm must be non-negative");
  flags.validate();
  model.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr_init", c.lr_init},
          {"lr_final", c.lr_final},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"flags", {{"use_cif", c.flags.use_cif}, {"use_fda", c.flags.use_fda}, {"use_pm", c.flags.use_pm}}},
          {"freeze_encoders", c.freeze_encoders},
          {"prompt_pairs", c.prompt_pairs},
          {"prompt_noise", c.prompt_noise},
          {"prompt_seed", c.prompt_seed},
          {"clip_norm", c.clip_norm},
          {"model", model::to_json(c.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
  }
  try {
    c.lr_init = j.value("lr_init", c.lr_init);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.freeze_encoders = j.value("freeze_encoders", c.freeze_encoders);
    c.prompt_pairs = j.value("prompt_pairs", c.prompt_pairs);
    c.prompt_noise = j.value("prompt_noise", c.prompt_noise);
    c.prompt_seed = j.value("prompt_seed", c.prompt_seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("flags")) {
      const auto& f = j.at("flags");
      if (!f.is_object()) throw ConfigError("flags must be an object");
      for (const auto& [key, value] : f.items()) {
        if (key != "use_cif" && key != "use_fda" && key != "use_pm") throw ConfigError("unknown flag '" + key + "'");
      }
      c.flags.use_cif = f.value("use_cif", c.flags.use_cif);
      c.flags.use_fda = f.value("use_fda", c.flags.use_fda);
      c.flags.use_pm = f.value("use_pm", c.flags.use_pm);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
  c.validate();
  return c;
}

PreparedSet prepare(const data::Dataset& ds, const TrainConfig& c) {
  PreparedSet p;
  p.dataset = &ds;
  const auto& v = data::Vocab::builtin();
  std::vector<data::QType> qtypes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    if (!s.image || s.question.empty()) {
      ++p.skipped;
      continue;
    }
    p.index.push_back(i);
    std::vector<int> answer = s.answer;
    if (answer.empty()) answer = {data::Vocab::kUnk};
    const auto cap = static_cast<std::size_t>(c.model.max_answer_len - 1);
    if (answer.size() > cap) answer.resize(cap);
    qtypes.push_back(s.qtype == data::QType::kClosed && model::closed_index(answer) >= 0 ? data::QType::kClosed
                                                                                         : data::QType::kOpen);
    p.answers.push_back(std::move(answer));
    p.type_keys.push_back(data::question_type_key(data::tokenize(v.decode(s.question))));
    auto rng = make_rng(c.prompt_seed, "prompt", i);
    std::vector<int> ids;
    try {
      auto b = prompt::make_bundle(ds, i, c.prompt_pairs, c.prompt_noise, rng, false);
      ids = std::move(b.ids);
    } catch (const NoSourceError&) {
      // No other question on this image: the prompt carries only the question.
      ids = v.encode("question: " + v.decode(s.question) + " a:");
    }
    if (static_cast<int>(ids.size()) > c.model.max_text_len) {
      ids.erase(ids.begin(), ids.end() - c.model.max_text_len);
    }
    p.prompts.push_back(std::move(ids));
  }
  for (std::size_t k = 0; k < p.index.size(); ++k) {
    const auto& s = ds.samples[p.index[k]];
    p.examples.push_back({s.image.get(), &s.question, &p.prompts[k], qtypes[k], &p.answers[k]});
  }
  return p;
}

namespace {

nlohmann::json checkpoint_metadata(const TrainConfig& c, const model::Model<float>& m, int epoch, const std::string& kind) {
  nlohmann::json meta = {{"train", to_json(c)}, {"epoch", epoch}, {"kind", kind}};
  meta["last_mi"] = m.last_mi() ? nlohmann::json(*m.last_mi()) : nlohmann::json(nullptr);
  return meta;
}

}  // namespace

TrainResult train(const TrainConfig& config, const data::Dataset& train_set, const data::Dataset* val_set,
                  const fs::path& out_dir, const ProgressFn& progress) {
  config.validate();
  auto prepared = prepare(train_set, config);
  if (prepared.size() == 0) throw ConfigError("training set is empty");
  std::optional<PreparedSet> val;
  if (val_set != nullptr && val_set->size() > 0) val = prepare(*val_set, config);

  fs::create_directories(out_dir);
  model::Model<float> m(config.model, derive_seed(config.seed, "model"));
  m.freeze_encoders(config.freeze_encoders);
  AdamWOptions opt;
  opt.weight_decay = config.weight_decay;
  opt.clip_norm = config.clip_norm;
  AdamW<float> optimizer(m.params(), opt);

  const std::size_t n = prepared.size();
  const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(config.batch_size) - 1) /
                                           static_cast<std::size_t>(config.batch_size));
  CosineSchedule schedule{config.lr_init, config.lr_final, per_epoch * config.epochs};

  std::ofstream log(out_dir / "train_log.csv");
  if (!log) throw IoError("cannot write " + (out_dir / "train_log.csv").string());
  log << "step,epoch,lr,loss_closed,loss_open,loss_causal,loss_critic,total,lambda\n";
  log.precision(9);

  TrainResult result;
  result.last = out_dir / "checkpoint_last";
  result.best = out_dir / "checkpoint_best";
  double best_score = -std::numeric_limits<double>::infinity();
  long step = 0;
  std::vector<model::Example> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(config.seed, "epoch", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, lambda_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(prepared.examples[order[k]]);
      const double lr = schedule.at(step);
      m.params().zero_grad();
      nn::Graph<float> g(&m.params());
      model::LossBreakdown br;
      auto loss = m.loss(g, batch, config.flags, &br);
      if (!std::isfinite(br.total)) {
        const auto dump = out_dir / "diverged";
        nn::save_checkpoint(m.params(), dump, checkpoint_metadata(config, m, epoch, "diverged"));
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + "; state saved to " + dump.string() +
                              ".bin");
      }
      g.backward(loss);
      optimizer.step(lr);
      log << step << ',' << epoch << ',' << lr << ',' << br.closed << ',' << br.open << ',' << br.causal << ','
          << br.critic << ',' << br.total << ',' << br.lambda << '\n';
      loss_sum += br.total;
      lambda_sum += br.lambda;
      ++batches;
      result.final_lr = lr;
      ++step;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(batches);
    stats.lambda_mean = lambda_sum / static_cast<double>(batches);
    double score = -stats.mean_loss;
    if (val) {
      stats.val = evaluate(m, config.flags, *val, config.batch_size);
      score = stats.val->accuracy_overall;
    }
    nn::save_checkpoint(m.params(), result.last, checkpoint_metadata(config, m, epoch, "last"));
    if (score > best_score) {
      best_score = score;
      nn::save_checkpoint(m.params(), result.best, checkpoint_metadata(config, m, epoch, "best"));
    }
    result.history.push_back(stats);
    if (progress) progress(stats);
  }
  result.steps = step;
  return result;
}

LoadedModel load_trained(const fs::path& stem) {
  const auto manifest = nn::read_checkpoint_manifest(stem);
  LoadedModel out;
  try {
    out.config = train_config_from_json(manifest.at("metadata").at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint " + stem.string() + " has no training config: " + e.what());
  }
  out.model = std::make_unique<model::Model<float>>(out.config.model, 0);
  nn::load_checkpoint(out.model->params(), stem);
  const auto& last = manifest.at("metadata").value("last_mi", nlohmann::json(nullptr));
  if (last.is_number()) out.model->set_last_mi(last.get<double>());
  return out;
}

Metrics evaluate(model::Model<float>& m, const Flags& flags, const PreparedSet& set, int batch_size,
                 std::vector<PredictionRecord>* records) {
  const auto& v = data::Vocab::builtin();
  MetricsAccumulator acc;
  // Evaluation must not disturb the stored gate statistic.
  const auto saved_mi = m.last_mi();
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const model::Example> batch(set.examples.data() + start, end - start);
    model::Diagnostics diag;
    auto preds = m.predict(batch, flags, records ? &diag : nullptr);
    m.set_last_mi(saved_mi);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const std::size_t e = start + k;
      for (int t : preds[k].tokens) {
        if (t < 0 || t >= v.size()) throw VocabError("prediction outside the vocabulary");
      }
      acc.add(set.examples[e].qtype, set.type_keys[e], preds[k].tokens, set.answers[e]);
      if (records) {
        PredictionRecord r;
        r.sample = set.index[e];
        r.prediction = preds[k];
        r.diagnostics.lambda = diag.lambda;
        r.diagnostics.mi = diag.mi;
        r.diagnostics.gate_from_last = diag.gate_from_last;
        r.diagnostics.encoder_mass = {diag.encoder_mass[k]};
        if (!diag.selected.empty()) r.diagnostics.selected = {diag.selected[k]};
        if (!diag.cif_mass.empty()) r.diagnostics.cif_mass = {diag.cif_mass[k]};
        records->push_back(std::move(r));
      }
    }
  }
  return acc.result();
}

Metrics evaluate(const fs::path& checkpoint_stem, const data::Dataset& ds) {
  auto loaded = load_trained(checkpoint_stem);
  auto set = prepare(ds, loaded.config);
  return evaluate(*loaded.model, loaded.config.flags, set, loaded.config.batch_size);
}

}  // namespace cvqa::train
