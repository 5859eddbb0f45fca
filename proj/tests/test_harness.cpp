// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <json.hpp>

#include "moemoe/ablation.hpp"
#include "moemoe/bytes.hpp"
#include "moemoe/checkpoint.hpp"
#include "moemoe/config.hpp"
#include "moemoe/gradcheck.hpp"
#include "moemoe/metrics.hpp"
#include "moemoe/train.hpp"

#ifndef MOEMOE_CLI_PATH
#error "MOEMOE_CLI_PATH must name the moemoe executable"
#endif

namespace moemoe {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "moemoe_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthConfig tiny_data() {
  SynthConfig s = gradcheck_synth_config();
  s.n_train = 16;
  s.n_val = 8;
  s.n_test = 12;
  return s;
}

RunConfig tiny_run() {
  RunConfig c = gradcheck_run_config();
  c.train.epochs = 2;
  c.train.batch_size = 4;
  return c;
}

std::map<std::string, std::vector<double>> snapshot(const Model& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : m.params().all()) out[p.name] = p.tensor.to_vector();
  return out;
}

std::vector<double> probe_logits(const Model& m, const Dataset& ds) {
  std::vector<double> out;
  for (const Sample& s : ds.samples) {
    NoGradGuard g;
    const SampleOutput o = forward_sample(m, s, {});
    const auto v = o.logits.to_vector();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

struct Cli {
  int status = -1;
  std::string out;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = fmt::format("{} {} 2>&1", MOEMOE_CLI_PATH, args);
  Cli r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

// ---------------------------------------------------------------- config

TEST(RunConfig, FlatRoundTrip) {
  RunConfig c = tiny_run();
  c.model.placement = {MoESite::kBoth, LayerSelector::kLast2, TrainMode::kExpertsOnly};
  c.schedule.decay_epochs = {3, 5};
  c.data_dir = "some/dir";
  const json j = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it) EXPECT_NE(it.key().find('.'), std::string::npos) << it.key();
  EXPECT_EQ(RunConfig::from_json(j).to_json(), j);
  EXPECT_EQ(j.at("moe.layers"), "last2");
}

TEST(RunConfig, NestedObjectsFlatten) {
  const json nested = {{"model", {{"d_model", 12}, {"n_heads", 3}}}, {"moe", {{"site", "decoder"}}}};
  const RunConfig c = RunConfig::from_json(nested);
  EXPECT_EQ(c.model.block.d_model, 12u);
  EXPECT_EQ(c.model.block.n_heads, 3u);
  EXPECT_EQ(c.model.placement.site, MoESite::kDecoder);
}

TEST(RunConfig, UnknownKeyAndBadValueAreErrors) {
  EXPECT_THROW(RunConfig::from_json({{"model.depth", 3}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"moe.site", "sideways"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"model.d_model", "wide"}}), std::invalid_argument);
}

TEST(RunConfig, DefaultsFollowTheTrainingRecipe) {
  const RunConfig c;
  EXPECT_EQ(c.schedule.base_lr, 1e-3);
  EXPECT_EQ(c.schedule.lr_at(5), 1e-3);
  EXPECT_NEAR(c.schedule.lr_at(6), 2e-4, 1e-18);
  EXPECT_NEAR(c.schedule.lr_at(9), 4e-5, 1e-18);
  EXPECT_EQ(c.train.epochs, 10);
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.model.aux_weight, 0.1);
}

// ---------------------------------------------------------------- checkpoint

struct Trained {
  RunConfig run;
  SynthConfig data;
  std::unique_ptr<Model> model;
  TrainState state;
  Dataset train;
};

Trained quick_train(int epochs) {
  Trained t;
  t.run = tiny_run();
  t.run.train.epochs = epochs;
  t.data = tiny_data();
  t.train = generate_dataset(t.data).train;
  t.model = std::make_unique<Model>(model_config_for(t.data, t.run.model));
  t.state = make_train_state(t.run);
  train(*t.model, t.state, t.train, nullptr, t.run);
  return t;
}

TEST(Checkpoint, RoundTripGivesBitIdenticalLogits) {
  Trained t = quick_train(1);
  const auto bytes = encode_checkpoint(t.run, t.data, *t.model, t.state);
  LoadedCheckpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(probe_logits(*ck.model, t.train), probe_logits(*t.model, t.train));
  EXPECT_EQ(snapshot(*ck.model), snapshot(*t.model));
  EXPECT_EQ(ck.state.epoch, 1);
  EXPECT_EQ(ck.state.optimizer.step_count(), t.state.optimizer.step_count());
  EXPECT_EQ(ck.data, t.data);
  for (const auto& [name, m] : t.state.optimizer.moments()) {
    ASSERT_TRUE(ck.state.optimizer.moments().count(name)) << name;
    EXPECT_EQ(ck.state.optimizer.moments().at(name).m, m.m) << name;
    EXPECT_EQ(ck.state.optimizer.moments().at(name).v, m.v) << name;
  }
  EXPECT_EQ(encode_checkpoint(ck.run, ck.data, *ck.model, ck.state), bytes);
  EXPECT_EQ(ck.state.rng.next_u64(), t.state.rng.next_u64());
}

TEST(Checkpoint, StartsWithMagicAndManifest) {
  Trained t = quick_train(0);
  const fs::path p = scratch_dir("manifest") / "m.ckpt";
  save_checkpoint(p.string(), t.run, t.data, *t.model, t.state);
  const auto bytes = read_file_bytes(p.string());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), kCheckpointMagic);
  const json h = read_checkpoint_header(p.string());
  std::size_t params = 0;
  for (const auto& e : h.at("tensors")) params += e.at("kind") == "param";
  EXPECT_EQ(params, t.model->params().size());
  EXPECT_EQ(read_u64_le(bytes.data() + bytes.size() - 8), fnv1a64(std::span(bytes.data(), bytes.size() - 8)));
}

TEST(Checkpoint, TamperedByteFailsChecksum) {
  Trained t = quick_train(0);
  auto bytes = encode_checkpoint(t.run, t.data, *t.model, t.state);
  bytes[bytes.size() / 2] ^= 0x10;
  try {
    decode_checkpoint(bytes);
    FAIL() << "expected a checksum error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
  Trained t = quick_train(0);
  auto bytes = encode_checkpoint(t.run, t.data, *t.model, t.state);
  bytes[7] = '2';
  try {
    decode_checkpoint(bytes);
    FAIL() << "expected a version error";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("MOEMOE02"), std::string::npos) << msg;
    EXPECT_NE(msg.find("MOEMOE01"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, DecoderOddReloadsWithMoeIntact) {
  Trained t = quick_train(1);
  ASSERT_EQ(t.model->moe_layers().size(), 1u);
  LoadedCheckpoint ck = decode_checkpoint(encode_checkpoint(t.run, t.data, *t.model, t.state));
  const MoEPlacement& pl = ck.model->config().placement;
  EXPECT_EQ(pl.site, MoESite::kDecoder);
  EXPECT_EQ(pl.layers, LayerSelector::kOdd);
  ASSERT_EQ(ck.model->moe_layers().size(), 1u);
  EXPECT_TRUE(ck.model->decoder[1].mixer.is_moe());
  EXPECT_FALSE(ck.model->decoder[0].mixer.is_moe());
  EXPECT_EQ(ck.model->moe_layers()[0]->n_experts(), t.model->moe_layers()[0]->n_experts());
}

TEST(Checkpoint, FrozenFlagsSurviveReload) {
  Trained t = quick_train(0);
  t.model->set_train_mode(TrainMode::kExpertsOnly);
  LoadedCheckpoint ck = decode_checkpoint(encode_checkpoint(t.run, t.data, *t.model, t.state));
  for (const auto& p : ck.model->params().all()) EXPECT_EQ(p.trainable, is_moe_parameter(p.name)) << p.name;
}

// ---------------------------------------------------------------- reproducibility

TEST(Reproducibility, SameConfigSameMetrics) {
  Trained a = quick_train(2), b = quick_train(2);
  const Dataset test = generate_dataset(tiny_data()).test;
  const auto pa = predict(*a.model, test), pb = predict(*b.model, test);
  EXPECT_EQ(accuracy(pa), accuracy(pb));
  EXPECT_EQ(recall_at_precision(pa).recall, recall_at_precision(pb).recall);
  EXPECT_EQ(snapshot(*a.model), snapshot(*b.model));
}

TEST(Reproducibility, ResumeEqualsUninterrupted) {
  Trained full = quick_train(3);
  Trained part = quick_train(1);
  LoadedCheckpoint ck = decode_checkpoint(encode_checkpoint(part.run, part.data, *part.model, part.state));
  RunConfig cfg = ck.run;
  cfg.train.epochs = 3;
  train(*ck.model, ck.state, part.train, nullptr, cfg);
  EXPECT_EQ(ck.state.epoch, 3);
  EXPECT_EQ(snapshot(*ck.model), snapshot(*full.model));
}

// ---------------------------------------------------------------- gradcheck

TEST(Gradcheck, DefaultToyConfigPasses) {
  const GradcheckReport r = run_gradcheck(gradcheck_run_config(), gradcheck_synth_config(), {});
  EXPECT_TRUE(r.passed) << r.worst.name << " " << r.worst.rel_error;
  EXPECT_EQ(r.entries.size(), 50u);
  EXPECT_LT(r.worst.rel_error, 1e-3);
}

TEST(Gradcheck, DecoderLossAlonePasses) {
  RunConfig c = gradcheck_run_config();
  c.model.aux_weight = 0.0;
  c.model.alignment = false;
  const GradcheckReport r = run_gradcheck(c, gradcheck_synth_config(), {});
  EXPECT_TRUE(r.passed) << r.worst.name << " " << r.worst.rel_error;
}

TEST(Gradcheck, CorruptedGradientFailsNamingParameter) {
  GradcheckOptions opt;
  opt.corrupt_parameter = "decoder.out_b";
  const GradcheckReport r = run_gradcheck(gradcheck_run_config(), gradcheck_synth_config(), opt);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst.name, "decoder.out_b");
  EXPECT_GT(r.worst.rel_error, 1e-3);
}

TEST(Gradcheck, LargeModelsAreRejected) {
  RunConfig c = gradcheck_run_config();
  c.model.block.d_model = 32;
  EXPECT_THROW(run_gradcheck(c, gradcheck_synth_config(), {}), std::invalid_argument);
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-3, 1e-15);
  EXPECT_NEAR(relative_error(2.0, 1.0), 0.5, 1e-15);
}

// ---------------------------------------------------------------- ablation

AblationGrid tiny_grid() {
  AblationGrid g;
  g.base = tiny_run();
  g.base.train.epochs = 1;
  g.finetune = {{"train.epochs", 1}};
  g.eval_limit = 6;
  return g;
}

TEST(Ablation, DefaultGridCoversTheSweep) {
  const auto vs = default_variants();
  std::map<std::string, const AblationVariant*> by;
  for (const auto& v : vs) by[v.name] = &v;
  for (const char* n : {"qga", "woqg", "woal", "s-enc", "pre/no-moe", "pre/decoder-odd/experts_only",
                        "pre/decoder-even/full", "pre/encoder-all/full", "pre/both-all/backbone_only"})
    EXPECT_TRUE(by.count(n)) << n;
  std::vector<double> lambdas;
  for (const auto& v : vs)
    if (v.overrides.contains("moe.aux_weight")) lambdas.push_back(v.overrides.at("moe.aux_weight").get<double>());
  EXPECT_EQ(lambdas, (std::vector<double>{0.01, 0.1, 0.5}));
}

TEST(Ablation, WoqgHoldsAlphaAtOneHalf) {
  const DatasetSplits d = generate_dataset(tiny_data());
  const AblationGrid g = tiny_grid();
  const AblationRow row = run_variant(g, {"woqg", VariantInit::kScratch, {{"model.fusion", "fixed_half"}}}, d.train,
                                      d.test, nullptr);
  ASSERT_EQ(row.status, "ok");
  EXPECT_EQ(row.alpha_min, 0.5);
  EXPECT_EQ(row.alpha_max, 0.5);
  const AblationRow qga = run_variant(g, {"qga", VariantInit::kScratch, json::object()}, d.train, d.test, nullptr);
  EXPECT_LT(qga.alpha_min, qga.alpha_max);
}

TEST(Ablation, RowsReproduceInIsolation) {
  const DatasetSplits d = generate_dataset(tiny_data());
  AblationGrid g = tiny_grid();
  g.variants = {{"qga", VariantInit::kScratch, json::object()},
                {"pre/decoder-odd/experts_only", VariantInit::kPretrained,
                 {{"moe.site", "decoder"}, {"moe.layers", "odd"}, {"moe.train_mode", "experts_only"}}}};
  const auto rows = run_ablation(g, d.train, d.test);
  ASSERT_EQ(rows.size(), 2u);
  const auto backbone = pretrain_backbone(g, d.train);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AblationRow again = run_variant(g, g.variants[i], d.train, d.test, backbone.get());
    EXPECT_EQ(rows[i].status, "ok");
    EXPECT_EQ(again.accuracy, rows[i].accuracy) << rows[i].name;
    EXPECT_EQ(again.recall_at_90, rows[i].recall_at_90) << rows[i].name;
    EXPECT_EQ(again.params_trained, rows[i].params_trained) << rows[i].name;
  }
  EXPECT_LT(rows[1].params_trained, rows[0].params_trained);
}

TEST(Ablation, FailedRunBecomesStatusRow) {
  const DatasetSplits d = generate_dataset(tiny_data());
  AblationGrid g = tiny_grid();
  g.variants = {{"broken", VariantInit::kScratch, {{"model.n_heads", 3}}},
                {"qga", VariantInit::kScratch, json::object()}};
  const auto rows = run_ablation(g, d.train, d.test);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].status.rfind("failed:", 0), 0u) << rows[0].status;
  EXPECT_EQ(rows[1].status, "ok");
  EXPECT_NE(ablation_csv(rows).find("broken,scratch"), std::string::npos);
}

TEST(Ablation, GridFileRoundTrip) {
  AblationGrid g = tiny_grid();
  g.variants = default_variants();
  const AblationGrid back = AblationGrid::from_json(g.to_json());
  EXPECT_EQ(back.to_json(), g.to_json());
  EXPECT_THROW(AblationGrid::from_json({{"bogus", 1}}), std::invalid_argument);
}

// ---------------------------------------------------------------- CLI

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    write_json(dir_ / "synth.json", tiny_data().to_json());
    json run = tiny_run().to_json();
    run["data.dir"] = (dir_ / "data").string();
    write_json(dir_ / "run.json", run);
    const Cli r = run_cli(fmt::format("datagen --config {} --out {}", (dir_ / "synth.json").string(),
                                      (dir_ / "data").string()));
    ASSERT_EQ(r.status, 0) << r.out;
    datagen_out_ = r.out;
  }
  fs::path dir_;
  std::string datagen_out_;
};

TEST_F(CliTest, DatagenSummaryMatchesFiles) {
  for (const char* split : {"train", "val", "test"}) {
    const Dataset ds = load_dataset((dir_ / "data" / (std::string(split) + ".jsonl")).string());
    std::map<std::string, std::size_t> counts;
    for (const Sample& s : ds.samples) ++counts[to_string(s.label)];
    const std::string expect = fmt::format("{}: {} samples -> context={} image={} both={}", split, ds.samples.size(),
                                           counts["context"], counts["image"], counts["both"]);
    EXPECT_NE(datagen_out_.find(expect), std::string::npos) << expect << "\n" << datagen_out_;
  }
  const auto first = read_file_bytes((dir_ / "data" / "train.jsonl").string());
  ASSERT_EQ(run_cli(fmt::format("datagen --quiet --config {} --out {}", (dir_ / "synth.json").string(),
                                (dir_ / "again").string()))
                .status,
            0);
  EXPECT_EQ(read_file_bytes((dir_ / "again" / "train.jsonl").string()), first);
}

TEST_F(CliTest, InvalidConfigExitsNonzeroWithOneLine) {
  write_json(dir_ / "bad.json", {{"n_attributes", 4}, {"mix_context", 0.9}});
  const Cli r = run_cli(fmt::format("datagen --config {} --out {}", (dir_ / "bad.json").string(), (dir_ / "x").string()));
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.out.rfind("error: ", 0), 0u) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
}

TEST_F(CliTest, ZeroEpochsWritesInitialCheckpointAndEmptyLog) {
  json run = json::parse(std::ifstream(dir_ / "run.json"));
  run["train.epochs"] = 0;
  write_json(dir_ / "run_e0.json", run);
  const Cli z = run_cli(fmt::format("train --config {} --out {}", (dir_ / "run_e0.json").string(),
                                    (dir_ / "e0").string()));
  ASSERT_EQ(z.status, 0) << z.out;
  ASSERT_TRUE(fs::exists(dir_ / "e0" / "final.ckpt"));
  EXPECT_EQ(read_lines(dir_ / "e0" / "log.jsonl").size(), 1u);
  LoadedCheckpoint ck = load_checkpoint((dir_ / "e0" / "final.ckpt").string());
  EXPECT_EQ(ck.state.epoch, 0);
  const Model fresh(model_config_for(tiny_data(), tiny_run().model));
  EXPECT_EQ(snapshot(*ck.model), snapshot(fresh));
}

TEST_F(CliTest, TrainLogAndResumeEquivalence) {
  const Cli full = run_cli(fmt::format("train --config {} --out {}", (dir_ / "run.json").string(),
                                       (dir_ / "full").string()));
  ASSERT_EQ(full.status, 0) << full.out;
  EXPECT_NE(full.out.find("final val accuracy="), std::string::npos) << full.out;
  const auto full_log = read_lines(dir_ / "full" / "log.jsonl");
  ASSERT_EQ(full_log.size(), 3u);
  const json header = json::parse(full_log[0]);
  EXPECT_EQ(header.at("config").at("train.epochs"), 2);
  EXPECT_EQ(header.at("config").at("moe.site"), "decoder");
  const json e1 = json::parse(full_log[1]);
  EXPECT_EQ(e1.at("lr"), 1e-3);
  EXPECT_TRUE(e1.at("val").contains("recall_at_90"));
  EXPECT_FALSE(e1.at("routing").empty());
  const auto routing = read_lines(dir_ / "full" / "routing.csv");
  ASSERT_GT(routing.size(), 1u);
  EXPECT_EQ(routing[0], "epoch,layer,expert,f,P");

  const Cli resumed = run_cli(fmt::format("train --checkpoint {} --out {}",
                                          (dir_ / "full" / "epoch_001.ckpt").string(), (dir_ / "resumed").string()));
  ASSERT_EQ(resumed.status, 0) << resumed.out;
  const auto res_log = read_lines(dir_ / "resumed" / "log.jsonl");
  ASSERT_EQ(res_log.size(), 2u);
  EXPECT_EQ(json::parse(res_log[0]).at("start_epoch"), 1);
  EXPECT_EQ(res_log[1], full_log[2]);
  LoadedCheckpoint a = load_checkpoint((dir_ / "resumed" / "final.ckpt").string());
  LoadedCheckpoint b = load_checkpoint((dir_ / "full" / "final.ckpt").string());
  EXPECT_EQ(snapshot(*a.model), snapshot(*b.model));
  EXPECT_EQ(a.state.optimizer.step_count(), b.state.optimizer.step_count());
  EXPECT_EQ(a.state.rng.next_u64(), b.state.rng.next_u64());
}

TEST_F(CliTest, EvalReportsPartitionTheSplit) {
  ASSERT_EQ(run_cli(fmt::format("train --quiet --config {} --out {}", (dir_ / "run.json").string(),
                                (dir_ / "run").string()))
                .status,
            0);
  const Cli r = run_cli(fmt::format("eval --quiet --checkpoint {} --dataset {} --out {}",
                                    (dir_ / "run" / "final.ckpt").string(), (dir_ / "data").string(),
                                    (dir_ / "eval").string()));
  ASSERT_EQ(r.status, 0) << r.out;
  for (const auto& [file, key] : {std::pair{"report_attribute.csv", "attribute"}, {"report_source.csv", "source"}}) {
    const auto lines = read_lines(dir_ / "eval" / file);
    ASSERT_GE(lines.size(), 3u);
    EXPECT_EQ(lines[0], fmt::format("{},n,accuracy,recall_at_90,threshold", key));
    std::size_t total = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::string group = lines[i].substr(0, lines[i].find(','));
      if (group == "macro" || group == "all") continue;
      total += std::stoul(lines[i].substr(lines[i].find(',') + 1));
    }
    EXPECT_EQ(total, tiny_data().n_test) << file;
  }
}

TEST_F(CliTest, EvalRejectsVocabularyMismatch) {
  ASSERT_EQ(run_cli(fmt::format("train --quiet --config {} --out {}", (dir_ / "run.json").string(),
                                (dir_ / "run").string()))
                .status,
            0);
  SynthConfig other = tiny_data();
  other.n_values = 3;
  write_json(dir_ / "other.json", other.to_json());
  ASSERT_EQ(run_cli(fmt::format("datagen --quiet --config {} --out {}", (dir_ / "other.json").string(),
                                (dir_ / "other").string()))
                .status,
            0);
  const Cli r = run_cli(fmt::format("eval --checkpoint {} --dataset {}", (dir_ / "run" / "final.ckpt").string(),
                                    (dir_ / "other").string()));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("vocabulary"), std::string::npos) << r.out;
}

TEST_F(CliTest, GradcheckVerb) {
  const Cli ok = run_cli("gradcheck --quiet");
  EXPECT_EQ(ok.status, 0) << ok.out;
  EXPECT_NE(ok.out.find("gradcheck PASS"), std::string::npos) << ok.out;
  const Cli bad = run_cli("gradcheck --quiet --corrupt decoder.out_w");
  EXPECT_EQ(bad.status, 1) << bad.out;
  EXPECT_NE(bad.out.find("decoder.out_w"), std::string::npos) << bad.out;
}

TEST_F(CliTest, InspectCheckpoint) {
  ASSERT_EQ(run_cli(fmt::format("train --quiet --config {} --out {}", (dir_ / "run.json").string(),
                                (dir_ / "run").string()))
                .status,
            0);
  const Cli r = run_cli(fmt::format("inspect-ckpt --checkpoint {}", (dir_ / "run" / "final.ckpt").string()));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("version MOEMOE01"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("site=decoder layers=odd"), std::string::npos) << r.out;
}

TEST_F(CliTest, AblateWritesRowsPerVariant) {
  json grid = tiny_grid().to_json();
  grid["base"]["data.dir"] = (dir_ / "data").string();
  grid["variants"] = json::array({{{"name", "qga"}}, {{"name", "woqg"}, {"overrides", {{"model.fusion", "fixed_half"}}}}});
  write_json(dir_ / "grid.json", grid);
  const Cli r = run_cli(fmt::format("ablate --quiet --config {} --out {}", (dir_ / "grid.json").string(),
                                    (dir_ / "abl").string()));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(read_lines(dir_ / "abl" / "ablation.jsonl").size(), 2u);
  const auto csv = read_lines(dir_ / "abl" / "ablation.csv");
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[0], "variant,init,accuracy,recall_at_90,params_trained,wall_seconds,status");
}

}  // namespace
}  // namespace moemoe
