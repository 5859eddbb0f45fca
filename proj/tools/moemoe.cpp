// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// moemoe command-line driver: datagen, train, eval, gradcheck, ablate, inspect-ckpt.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "moemoe/ablation.hpp"
#include "moemoe/checkpoint.hpp"
#include "moemoe/config.hpp"
#include "moemoe/data.hpp"
#include "moemoe/gradcheck.hpp"
#include "moemoe/metrics.hpp"
#include "moemoe/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moemoe;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string checkpoint;
  bool quiet = false;
  std::size_t n_params = 50;
  std::string corrupt;
};

void say(const Flags& f, const std::string& line) {
  if (!f.quiet) std::cout << line << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << text;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("{} is not valid JSON: {}", path, e.what()));
  }
}

/// A directory resolves to <dir>/<split>.jsonl; a file is used as is.
std::string split_path(const std::string& path, const std::string& split) {
  if (fs::is_directory(path)) return (fs::path(path) / (split + ".jsonl")).string();
  return path;
}

std::string label_counts(const Dataset& ds) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : ds.samples) ++counts[to_string(s.label)];
  std::string out;
  for (const char* l : {"context", "image", "both"}) out += fmt::format(" {}={}", l, counts[l]);
  return out;
}

RunConfig resolve_run_config(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) {
    cfg.train.seed = *f.seed;
    cfg.model.seed = *f.seed;
  }
  if (!f.dataset.empty()) cfg.data_dir = f.dataset;
  if (!f.out.empty()) cfg.out_dir = f.out;
  return cfg;
}

int cmd_datagen(const Flags& f) {
  SynthConfig cfg = f.config.empty() ? SynthConfig{} : SynthConfig::from_json(read_json_file(f.config));
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  const fs::path out = f.out.empty() ? fs::path("data") : fs::path(f.out);
  fs::create_directories(out);
  const DatasetSplits splits = generate_dataset(cfg);
  for (const auto& [name, ds] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
    const fs::path p = out / (std::string(name) + ".jsonl");
    save_dataset(*ds, p.string());
    say(f, fmt::format("{}: {} samples ->{} ({})", name, ds->samples.size(), label_counts(*ds), p.string()));
  }
  return 0;
}

int cmd_train(const Flags& f) {
  RunConfig cfg;
  std::unique_ptr<Model> model;
  TrainState state;
  SynthConfig data_cfg;
  if (!f.checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
    cfg = f.config.empty() ? ck.run : resolve_run_config(f);
    if (f.config.empty()) {
      if (!f.dataset.empty()) cfg.data_dir = f.dataset;
      if (!f.out.empty()) cfg.out_dir = f.out;
    }
    state = std::move(ck.state);
    state.optimizer.schedule() = cfg.schedule;
    model = std::move(ck.model);
    data_cfg = ck.data;
  } else {
    cfg = resolve_run_config(f);
  }
  if (cfg.data_dir.empty()) throw std::invalid_argument("train: no dataset (set data.dir or pass --dataset)");
  const Dataset train_set = load_dataset(split_path(cfg.data_dir, "train"));
  std::optional<Dataset> val;
  if (fs::is_directory(cfg.data_dir) && fs::exists(split_path(cfg.data_dir, "val"))) {
    val = load_dataset(split_path(cfg.data_dir, "val"));
  }
  if (!model) {
    data_cfg = train_set.config;
    model = std::make_unique<Model>(model_config_for(train_set.config, cfg.model));
    state = make_train_state(cfg);
  }
  check_compatible(model->config(), train_set.config);

  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  std::ofstream log(out / "log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error(fmt::format("cannot write {}", (out / "log.jsonl").string()));
  RunConfig echoed = cfg;
  echoed.model = model->config();
  log << json{{"config", echoed.to_json()}, {"start_epoch", state.epoch}}.dump() << '\n';
  std::ofstream routing(out / "routing.csv", std::ios::trunc);
  routing << "epoch,layer,expert,f,P\n";

  std::optional<EpochRecord> last;
  try {
    moemoe::train(*model, state, train_set, val ? &*val : nullptr, cfg, [&](const EpochRecord& r, const TrainState& st) {
      log << r.to_json().dump() << '\n';
      log.flush();
      for (const auto& [layer, st] : r.routing) {
        if (st.tokens == 0) continue;
        for (std::size_t i = 0; i < st.n; ++i) routing << fmt::format("{},{},{},{:.6f},{:.6f}\n", r.epoch, layer, i, st.f(i), st.P(i));
      }
      routing.flush();
      save_checkpoint((out / fmt::format("epoch_{:03d}.ckpt", r.epoch)).string(), cfg, data_cfg, *model, st);
      std::string line = fmt::format("epoch {} lr={:g} loss={:.5f} dec={:.5f} qca={:.5f} qia={:.5f} aux={:.5f}", r.epoch,
                                     r.lr, r.loss.total, r.loss.dec, r.loss.qca, r.loss.qia, r.loss.aux);
      if (r.val_accuracy) line += fmt::format(" val_acc={:.4f} val_r90={:.4f}", *r.val_accuracy, *r.val_recall_at_90);
      say(f, line);
      last = r;
    });
  } catch (const DivergenceError& e) {
    throw std::runtime_error(fmt::format("training diverged: {}", e.what()));
  }
  save_checkpoint((out / "final.ckpt").string(), cfg, data_cfg, *model, state);
  if (last && last->val_accuracy) {
    std::cout << fmt::format("final val accuracy={:.4f} recall_at_90={:.4f}\n", *last->val_accuracy, *last->val_recall_at_90);
  } else {
    std::cout << fmt::format("final epoch={} (no validation split)\n", state.epoch);
  }
  return 0;
}

int cmd_eval(const Flags& f) {
  if (f.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required");
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  const std::string path = f.dataset.empty() ? split_path(ck.run.data_dir, "test") : split_path(f.dataset, "test");
  const Dataset ds = load_dataset(path);
  check_compatible(ck.model->config(), ds.config);
  const auto preds = predict(*ck.model, ds);
  const Report by_attr = per_attribute_report(preds);
  const Report by_source = per_source_report(preds);
  const fs::path out = f.out.empty() ? fs::path(ck.run.out_dir) : fs::path(f.out);
  fs::create_directories(out);
  write_text(out / "report_attribute.csv", report_csv(by_attr));
  write_text(out / "report_source.csv", report_csv(by_source));
  const std::string text = report_text(by_attr) + "\n" + report_text(by_source);
  write_text(out / "report.txt", text);
  say(f, text);
  std::cout << fmt::format("accuracy={:.4f} recall_at_90={:.4f} n={}\n", by_attr.overall.accuracy, by_attr.overall.recall,
                           by_attr.overall.n);
  return 0;
}

int cmd_gradcheck(const Flags& f) {
  RunConfig cfg = f.config.empty() ? gradcheck_run_config() : load_run_config(f.config);
  SynthConfig data = gradcheck_synth_config();
  data.k = cfg.model.block.k;
  data.image_size = cfg.model.image_size;
  data.patch_size = cfg.model.patch_size;
  data.image_channels = cfg.model.image_channels;
  data.validate();
  GradcheckOptions opt;
  opt.n_params = f.n_params;
  opt.corrupt_parameter = f.corrupt;
  if (f.seed) opt.seed = *f.seed;
  const GradcheckReport rep = run_gradcheck(cfg, data, opt);
  if (!f.quiet) {
    for (const auto& e : rep.entries) {
      std::cout << fmt::format("{}[{}] analytic={:.10e} numeric={:.10e} rel={:.3e}\n", e.name, e.index, e.analytic,
                               e.numeric, e.rel_error);
    }
  }
  std::cout << fmt::format("gradcheck {}: worst rel error {:.3e} at {}[{}] over {} parameters (tolerance {:g})\n",
                           rep.passed ? "PASS" : "FAIL", rep.worst.rel_error, rep.worst.name, rep.worst.index,
                           rep.entries.size(), rep.tolerance);
  return rep.passed ? 0 : 1;
}

int cmd_ablate(const Flags& f) {
  AblationGrid grid = f.config.empty() ? AblationGrid::from_json(json::object()) : AblationGrid::from_json(read_json_file(f.config));
  if (f.seed) {
    grid.base.train.seed = *f.seed;
    grid.base.model.seed = *f.seed;
  }
  const std::string data_dir = f.dataset.empty() ? grid.base.data_dir : f.dataset;
  if (data_dir.empty()) throw std::invalid_argument("ablate: no dataset (set base.data.dir or pass --dataset)");
  const Dataset train_set = load_dataset(split_path(data_dir, "train"));
  const Dataset eval_set = load_dataset(fs::is_directory(data_dir) ? split_path(data_dir, "test") : data_dir);
  const fs::path out = f.out.empty() ? fs::path(grid.base.out_dir) / "ablation" : fs::path(f.out);
  fs::create_directories(out);
  std::ofstream rows_log(out / "ablation.jsonl", std::ios::trunc);
  const auto rows = run_ablation(grid, train_set, eval_set, [&](const AblationRow& r) {
    rows_log << r.to_json().dump() << '\n';
    rows_log.flush();
    say(f, fmt::format("{}: {} accuracy={:.4f} recall_at_90={:.4f} ({:.1f}s)", r.name, r.status, r.accuracy,
                       r.recall_at_90, r.wall_seconds));
  });
  write_text(out / "ablation.csv", ablation_csv(rows));
  std::cout << ablation_table(rows);
  return 0;
}

int cmd_inspect(const Flags& f) {
  if (f.checkpoint.empty()) throw std::invalid_argument("inspect-ckpt: --checkpoint is required");
  const json header = read_checkpoint_header(f.checkpoint);
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  std::cout << fmt::format("version {}  epoch {}  adam steps {}\n", header.at("version").get<std::string>(),
                           header.at("epoch").get<int>(), header.at("step_count").get<std::size_t>());
  const MoEPlacement& pl = ck.model->config().placement;
  std::cout << fmt::format("placement site={} layers={} train_mode={}  moe layers: {}\n", to_string(pl.site),
                           to_string(pl.layers), to_string(pl.train_mode), ck.model->moe_layers().size());
  for (const MoELayer* m : ck.model->moe_layers()) {
    std::cout << fmt::format("  {} experts={} k_top={}\n", m->name, m->n_experts(), m->k_top);
  }
  std::cout << fmt::format("parameters {} ({} scalars)\n", ck.model->params().size(), ck.model->params().scalar_count());
  if (!f.quiet) {
    for (const auto& t : header.at("tensors")) {
      std::cout << fmt::format("  {:<7} {:<48} {:<10} offset={} trainable={}\n", t.at("kind").get<std::string>(),
                               t.at("name").get<std::string>(), shape_str(t.at("shape").get<Shape>()),
                               t.at("offset").get<std::size_t>(), t.at("trainable").get<bool>());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moemoe: multi-source question answering with question-guided fusion and sparse experts"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "config file (JSON)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "seed override");
    sub->add_option("--dataset", f.dataset, "dataset directory or split file");
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint path");
    sub->add_flag("--quiet", f.quiet, "suppress per-step output");
  };
  std::map<std::string, std::function<int(const Flags&)>> verbs = {
      {"datagen", cmd_datagen}, {"train", cmd_train},   {"eval", cmd_eval},
      {"gradcheck", cmd_gradcheck}, {"ablate", cmd_ablate}, {"inspect-ckpt", cmd_inspect},
  };
  const std::map<std::string, std::string> help = {
      {"datagen", "generate train/val/test split files"},
      {"train", "train a model, writing a log and per-epoch checkpoints"},
      {"eval", "score a checkpoint on a split, writing per-attribute and per-source reports"},
      {"gradcheck", "compare autograd against finite differences on a toy model"},
      {"ablate", "run the ablation grid"},
      {"inspect-ckpt", "print a checkpoint's header and manifest"},
  };
  for (const auto& [name, _] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    common(sub);
    if (name == "gradcheck") {
      sub->add_option("--n-params", f.n_params, "number of sampled parameter entries");
      sub->add_option("--corrupt", f.corrupt, "test hook: corrupt this parameter's analytic gradient");
    }
  }
  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [name, fn] : verbs) {
      if (app.got_subcommand(name)) return fn(f);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
