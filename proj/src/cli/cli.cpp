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

#include "cvqa/cli/cli.hpp"

#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cvqa/cli/manifest.hpp"
#include "cvqa/data/dataset.hpp"
#include "cvqa/errors.hpp"
#include "cvqa/prompt/prompt.hpp"
#include "cvqa/scm/fuzz.hpp"
#include "cvqa/train/ablation.hpp"
#include "cvqa/train/attention.hpp"
#include "cvqa/train/trainer.hpp"

namespace cvqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  // subcommand specific
  int trials = 100;
  std::string data, val, test, checkpoint, plain;
  std::vector<std::size_t> samples;
  std::vector<std::uint64_t> seeds;
  bool prompts = false;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path);
  try {
    auto j = json::parse(f);
    if (!j.is_object()) throw ConfigError("config " + path + " must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

/// Removes `key` from `j` and returns it, or nullopt.
std::optional<json> take(json& j, const std::string& key) {
  if (!j.contains(key)) return std::nullopt;
  json v = j[key];
  j.erase(key);
  return v;
}

std::string take_string(json& j, const std::string& key) {
  auto v = take(j, key);
  if (!v) return "";
  if (!v->is_string()) throw ConfigError("'" + key + "' must be a string");
  return v->get<std::string>();
}

data::Dataset load_data(const std::string& path, const std::string& role) {
  if (path.empty()) throw ConfigError("no " + role + " dataset given");
  if (!fs::exists(path)) throw ConfigError(role + " dataset not found: " + path);
  return data::load_dataset(path);
}

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path resolve_out(const Options& o, const std::string& sub) {
  if (!o.out.empty()) {
    fs::path p(o.out);
    if (p.is_relative() && std::getenv(kOutputRootEnv) && *std::getenv(kOutputRootEnv)) p = output_root() / p;
    return p;
  }
  std::string stamp = utc_now();
  for (char& c : stamp) {
    if (c == ':') c = '-';
  }
  return output_root() / (sub + "_" + stamp + "_" + std::to_string(::getpid()));
}

void prepare_out(const fs::path& out, bool force) {
  std::error_code ec;
  if (fs::exists(out, ec) && !fs::is_empty(out, ec)) {
    if (!force) throw ConfigError("output directory " + out.string() + " exists; pass --force to overwrite");
    fs::remove_all(out, ec);
    if (ec) throw IoError("cannot clear " + out.string() + ": " + ec.message());
  }
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

void add_dataset(RunManifest& m, const std::string& role, const fs::path& path) {
  m.datasets.push_back({role, path, git_blob_sha1(path)});
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::string metrics_line(const train::Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "overall %.4f  open %.4f  closed %.4f  bleu1 %.4f  f1 %.4f  (n_open %ld, n_closed %ld)",
                m.accuracy_overall, m.accuracy_open, m.accuracy_closed, m.bleu1, m.f1, m.n_open, m.n_closed);
  return buf;
}

// ---- subcommands ----------------------------------------------------------

void cmd_gen(const Options& o, RunManifest& man, std::ostream& out) {
  json cfg = read_config(o.config);
  auto split_cfg = take(cfg, "split");
  const std::string storage_name = take_string(cfg, "image_storage");
  data::ImageStorage storage = data::ImageStorage::kInline;
  if (storage_name == "files") {
    storage = data::ImageStorage::kFiles;
  } else if (!storage_name.empty() && storage_name != "inline") {
    throw ConfigError("image_storage must be 'inline' or 'files'");
  }
  auto gen = data::gen_config_from_json(cfg);
  if (o.seed) gen.seed = *o.seed;
  gen.validate();
  double train_frac = 0.0;
  std::optional<double> test_rho;
  if (split_cfg) {
    if (!split_cfg->is_object()) throw ConfigError("split must be an object");
    for (const auto& [k, v] : split_cfg->items()) {
      if (k != "train_fraction" && k != "test_rho") throw ConfigError("unknown split key '" + k + "'");
    }
    try {
      train_frac = split_cfg->value("train_fraction", 0.8);
      if (split_cfg->contains("test_rho")) test_rho = split_cfg->at("test_rho").get<double>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("split: ") + e.what());
    }
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  }
  man.seed = gen.seed;
  man.config = data::to_json(gen);
  if (split_cfg) man.config["split"] = *split_cfg;
  man.config["image_storage"] = storage == data::ImageStorage::kFiles ? "files" : "inline";
  man.write();

  auto ds = data::generate_dataset(gen);
  if (!split_cfg) {
    data::save_dataset(ds, man.output_dir, storage);
    add_dataset(man, "dataset", man.output_dir / "dataset.json");
    out << "wrote " << ds.size() << " samples to " << (man.output_dir / "dataset.json").string() << '\n';
    return;
  }
  auto parts = data::split(ds, train_frac, derive_seed(gen.seed, "split"), test_rho);
  data::save_dataset(parts.train, man.output_dir / "train", storage);
  data::save_dataset(parts.test, man.output_dir / "test", storage);
  add_dataset(man, "train", man.output_dir / "train" / "dataset.json");
  add_dataset(man, "test", man.output_dir / "test" / "dataset.json");
  out << "wrote " << parts.train.size() << " train and " << parts.test.size() << " test samples under "
      << man.output_dir.string() << '\n';
}

void cmd_oracle(const Options& o, RunManifest& man, std::ostream& out) {
  json cfg = read_config(o.config);
  scm::FuzzOptions fo;
  int trials = o.trials;
  std::uint64_t seed = o.seed.value_or(0);
  try {
    for (const auto& [k, v] : cfg.items()) {
      if (k == "trials") trials = v.get<int>();
      else if (k == "max_card") fo.max_card = v.get<int>();
      else if (k == "concentration") fo.concentration = v.get<double>();
      else if (k == "seed") seed = o.seed ? seed : v.get<std::uint64_t>();
      else throw ConfigError("unknown oracle-check key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("oracle-check config: ") + e.what());
  }
  if (fo.max_card < 2 || fo.max_card > 4) throw ConfigError("max_card must lie in [2, 4]");
  if (!(fo.concentration > 0.0)) throw ConfigError("concentration must be positive");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  man.seed = seed;
  man.config = {{"trials", trials}, {"max_card", fo.max_card}, {"concentration", fo.concentration}, {"seed", seed}};
  man.write();
  auto r = scm::fuzz_frontdoor(trials, seed, fo);
  write_json({{"trials", r.trials}, {"max_error", r.max_error}, {"max_row_error", r.max_row_error},
              {"seconds", r.seconds}},
             man.output_dir / "oracle_check.json");
  char buf[160];
  std::snprintf(buf, sizeof buf, "max front-door error %.3e over %d SCMs (row-sum error %.3e, %.2f s)\n", r.max_error,
                r.trials, r.max_row_error, r.seconds);
  out << buf;
  if (!(r.max_error < 1e-10)) throw NonFiniteError("front-door estimate deviates from the ground truth");
}

train::TrainConfig train_config(json cfg, const Options& o, std::string* data_path, std::string* val_path) {
  if (auto d = take(cfg, "data")) {
    if (!d->is_object()) throw ConfigError("'data' must be an object of dataset paths");
    for (const auto& [k, v] : d->items()) {
      if (!v.is_string()) throw ConfigError("data." + k + " must be a path");
      if (k == "train" && data_path && data_path->empty()) *data_path = v.get<std::string>();
      else if ((k == "val" || k == "test") && val_path && val_path->empty()) *val_path = v.get<std::string>();
      else if (k != "train" && k != "val" && k != "test") throw ConfigError("unknown data key '" + k + "'");
    }
  }
  auto c = train::train_config_from_json(cfg);
  if (o.seed) c.seed = *o.seed;
  return c;
}

void cmd_train(const Options& o, RunManifest& man, std::ostream& out) {
  std::string data_path = o.data, val_path = o.val;
  auto c = train_config(read_config(o.config), o, &data_path, &val_path);
  auto train_set = load_data(data_path, "training");
  add_dataset(man, "train", data_path);
  std::optional<data::Dataset> val;
  if (!val_path.empty()) {
    val = load_data(val_path, "validation");
    add_dataset(man, "val", val_path);
  }
  man.seed = c.seed;
  man.config = train::to_json(c);
  man.write();
  auto progress = [&](const train::EpochStats& e) {
    out << "epoch " << e.epoch + 1 << "/" << c.epochs << "  loss " << e.mean_loss << "  lambda " << e.lambda_mean;
    if (e.val) out << "  val " << metrics_line(*e.val);
    out << '\n';
  };
  auto r = train::train(c, train_set, val ? &*val : nullptr, man.output_dir, progress);
  json summary = {{"steps", r.steps}, {"final_lr", r.final_lr}, {"last", r.last.string()}, {"best", r.best.string()}};
  json val_log = json::array();
  for (const auto& e : r.history) {
    if (e.val) val_log.push_back({{"epoch", e.epoch}, {"metrics", train::to_json(*e.val)}});
  }
  summary["validation"] = val_log;
  write_json(summary, man.output_dir / "train_summary.json");
  if (val) {
    std::ofstream f(man.output_dir / "val_log.csv");
    f << "epoch,accuracy_overall,accuracy_open,accuracy_closed,bleu1,f1\n";
    for (const auto& e : r.history) {
      f << e.epoch << ',' << e.val->accuracy_overall << ',' << e.val->accuracy_open << ',' << e.val->accuracy_closed
        << ',' << e.val->bleu1 << ',' << e.val->f1 << '\n';
    }
  }
  out << "checkpoints: " << r.last.string() << ", " << r.best.string() << '\n';
}

void write_predictions(const std::vector<train::PredictionRecord>& recs, const data::Dataset& ds,
                       const fs::path& path) {
  const auto& v = data::Vocab::builtin();
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "sample,qtype,question,answer,prediction,correct\n";
  for (const auto& r : recs) {
    const auto& s = ds.samples[r.sample];
    const auto pred = v.decode(r.prediction.tokens);
    const auto truth = v.decode(s.answer);
    f << r.sample << ',' << data::name(r.prediction.qtype) << ",\"" << v.decode(s.question) << "\",\"" << truth
      << "\",\"" << pred << "\"," << (pred == truth) << '\n';
  }
}

void cmd_eval(const Options& o, RunManifest& man, std::ostream& out) {
  json cfg = read_config(o.config);
  std::string ckpt = o.checkpoint.empty() ? take_string(cfg, "checkpoint") : (take_string(cfg, "checkpoint"), o.checkpoint);
  std::string data_path = o.data.empty() ? take_string(cfg, "data") : (take_string(cfg, "data"), o.data);
  if (!cfg.empty()) throw ConfigError("unknown eval key '" + cfg.begin().key() + "'");
  if (ckpt.empty()) throw ConfigError("eval needs --checkpoint");
  fs::path stem(ckpt);
  if (stem.extension() == ".bin" || stem.extension() == ".json") stem.replace_extension();
  if (!fs::exists(stem.string() + ".bin")) throw ConfigError("checkpoint not found: " + stem.string());
  auto ds = load_data(data_path, "evaluation");
  add_dataset(man, "eval", data_path);
  man.config = {{"checkpoint", stem.string()}, {"data", data_path}};
  man.write();
  auto loaded = train::load_trained(stem);
  auto set = train::prepare(ds, loaded.config);
  std::vector<train::PredictionRecord> recs;
  auto m = train::evaluate(*loaded.model, loaded.config.flags, set, loaded.config.batch_size, &recs);
  man.seed = loaded.config.seed;
  write_json(train::to_json(m), man.output_dir / "metrics.json");
  write_predictions(recs, ds, man.output_dir / "predictions.csv");
  out << metrics_line(m) << '\n';
}

void cmd_ablate(const Options& o, RunManifest& man, std::ostream& out) {
  json cfg = read_config(o.config);
  std::vector<std::uint64_t> seeds = o.seeds;
  if (auto s = take(cfg, "seeds")) {
    try {
      if (seeds.empty()) seeds = s->get<std::vector<std::uint64_t>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("seeds must be a list of integers: ") + e.what());
    }
  }
  if (seeds.empty()) seeds = {0, 1, 2, 3, 4};
  if (o.seed) {
    const auto n = seeds.size();
    seeds.clear();
    for (std::size_t k = 0; k < n; ++k) seeds.push_back(*o.seed + k);
  }
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("seeds must be distinct");
  std::string data_path = o.data, test_path = o.test;
  auto c = train_config(cfg, Options{}, &data_path, &test_path);
  auto train_set = load_data(data_path, "training");
  auto test_set = load_data(test_path, "test");
  add_dataset(man, "train", data_path);
  add_dataset(man, "test", test_path);
  man.seed = seeds.front();
  man.config = train::to_json(c);
  man.config["seeds"] = seeds;
  man.write();
  auto progress = [&](const train::RunResult& r) { out << r.arm << " seed " << r.seed << ": " << metrics_line(r.metrics) << '\n'; };
  auto res = train::ablate(c, seeds, train_set, test_set, man.output_dir, {}, progress);
  out << "table: " << (man.output_dir / "ablation.csv").string() << '\n';
  for (const auto& s : res.summary) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s overall %.4f +- %.4f\n", s.arm.c_str(), s.mean_sd[2].second.first,
                  s.mean_sd[2].second.second);
    out << buf;
  }
}

void cmd_viz(const Options& o, RunManifest& man, std::ostream& out) {
  json cfg = read_config(o.config);
  std::string ckpt = o.checkpoint.empty() ? take_string(cfg, "checkpoint") : (take_string(cfg, "checkpoint"), o.checkpoint);
  std::string plain = o.plain.empty() ? take_string(cfg, "plain_checkpoint") : (take_string(cfg, "plain_checkpoint"), o.plain);
  std::string data_path = o.data.empty() ? take_string(cfg, "data") : (take_string(cfg, "data"), o.data);
  std::vector<std::size_t> samples = o.samples;
  if (auto s = take(cfg, "samples")) {
    try {
      if (samples.empty()) samples = s->get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("samples must be a list of indices: ") + e.what());
    }
  }
  if (!cfg.empty()) throw ConfigError("unknown viz key '" + cfg.begin().key() + "'");
  if (ckpt.empty()) throw ConfigError("viz needs --checkpoint");
  auto strip = [](std::string p) {
    fs::path s(p);
    if (s.extension() == ".bin" || s.extension() == ".json") s.replace_extension();
    if (!p.empty() && !fs::exists(s.string() + ".bin")) throw ConfigError("checkpoint not found: " + s.string());
    return s;
  };
  const auto stem = strip(ckpt);
  const auto plain_stem = plain.empty() ? fs::path{} : strip(plain);
  auto ds = load_data(data_path, "visualization");
  add_dataset(man, "viz", data_path);
  if (samples.empty()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(8, ds.size()); ++i) samples.push_back(i);
  }
  man.config = {{"checkpoint", stem.string()}, {"plain_checkpoint", plain_stem.string()}, {"data", data_path},
                {"samples", samples}};
  man.write();
  auto summary = train::export_attention(stem, plain_stem, ds, samples, man.output_dir);
  if (o.prompts) {
    auto loaded = train::load_trained(stem);
    std::ofstream f(man.output_dir / "prompts.txt");
    const auto& v = data::Vocab::builtin();
    for (std::size_t i : samples) {
      auto rng = make_rng(loaded.config.prompt_seed, "prompt", i);
      try {
        auto b = prompt::make_bundle(ds, i, loaded.config.prompt_pairs, loaded.config.prompt_noise, rng, false);
        f << "sample " << i << ": " << v.decode(b.ids) << '\n';
      } catch (const NoSourceError& e) {
        f << "sample " << i << ": (no prompt source) " << e.what() << '\n';
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "exported %zu samples; lesion-region mass cif %.4f, plain %.4f\n", summary.exported,
                summary.region_mass_cif, summary.region_mass_plain);
  out << buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal VQA toolkit: data generation, oracle checks, training, evaluation, ablations, attention export"};
  app.require_subcommand(1, 1);
  Options o;
  std::uint64_t seed_value = 0;
  std::string samples_text, seeds_text;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--seed", seed_value, "root seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--force", o.force, "overwrite an existing output directory");
  };
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  auto* oracle = app.add_subcommand("oracle-check", "fuzz the front-door estimator against graph mutilation");
  auto* trn = app.add_subcommand("train", "train one model");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* abl = app.add_subcommand("ablate", "run the CIF x PM grid plus the bypass arm over several seeds");
  auto* viz = app.add_subcommand("viz", "export attention heatmaps");
  for (auto* s : {gen, oracle, trn, evl, abl, viz}) common(s);
  oracle->add_option("--trials", o.trials, "number of random SCMs")->check(CLI::PositiveNumber);
  trn->add_option("--data", o.data, "training dataset.json");
  trn->add_option("--val", o.val, "validation dataset.json");
  evl->add_option("--checkpoint", o.checkpoint, "checkpoint stem");
  evl->add_option("--data", o.data, "dataset.json");
  abl->add_option("--data", o.data, "training dataset.json");
  abl->add_option("--test", o.test, "test dataset.json");
  abl->add_option("--seeds", seeds_text, "comma-separated seeds");
  viz->add_option("--checkpoint", o.checkpoint, "checkpoint trained with CIF");
  viz->add_option("--plain", o.plain, "checkpoint trained without CIF (default: same weights, CIF off)");
  viz->add_option("--data", o.data, "dataset.json");
  viz->add_option("--samples", samples_text, "comma-separated sample indices");
  viz->add_flag("--prompts", o.prompts, "also write the generated prompts");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) o.seed = seed_value;
  const std::string name = sub->get_name();

  RunManifest man;
  man.subcommand = name;
  man.config_path = o.config;
  man.seed = o.seed;
  man.argv = args;
  man.started = utc_now();
  bool have_out = false;
  auto finish = [&](int code, const std::string& status, const std::string& message) {
    man.exit_code = code;
    man.status = status;
    man.message = message;
    man.finished = utc_now();
    if (have_out) {
      try {
        man.write();
      } catch (const std::exception& e) {
        err << "warning: could not finalize manifest: " << e.what() << '\n';
      }
    }
    return code;
  };
  try {
    try {
      for (const auto& s : split_list(samples_text)) o.samples.push_back(std::stoull(s));
      for (const auto& s : split_list(seeds_text)) o.seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("--samples and --seeds take comma-separated non-negative integers");
    }
    if (!o.config.empty() && !fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    man.output_dir = resolve_out(o, name);
    prepare_out(man.output_dir, o.force);
    have_out = true;
    man.write();
    if (name == "gen") cmd_gen(o, man, out);
    else if (name == "oracle-check") cmd_oracle(o, man, out);
    else if (name == "train") cmd_train(o, man, out);
    else if (name == "eval") cmd_eval(o, man, out);
    else if (name == "ablate") cmd_ablate(o, man, out);
    else cmd_viz(o, man, out);
    return finish(kOk, "ok", "");
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return finish(kValidation, "invalid", e.what());
  } catch (const std::exception& e) {
    std::string dump;
    if (have_out) {
      dump = (man.output_dir / "failure.json").string();
      try {
        write_json({{"subcommand", name}, {"error", e.what()}, {"time", utc_now()}}, dump);
      } catch (const std::exception&) {
        dump.clear();
      }
    }
    err << "error: " << e.what();
    if (!dump.empty()) err << " (state dump: " << dump << ")";
    err << '\n';
    return finish(kRuntime, "failed", e.what());
  }
}

}  // namespace cvqa::cli
