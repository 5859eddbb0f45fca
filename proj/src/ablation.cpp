// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/ablation.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

#include "moemoe/metrics.hpp"
#include "moemoe/train.hpp"

namespace moemoe {

namespace {

using nlohmann::json;

json merged(json a, const json& b) {
  a = flatten_json(a);
  for (auto it = b.begin(); it != b.end(); ++it) a[it.key()] = *it;
  return a;
}

RunConfig variant_config(const AblationGrid& grid, const AblationVariant& v) {
  json j = grid.base.to_json();
  if (v.init == VariantInit::kPretrained) j = merged(j, flatten_json(grid.finetune));
  return RunConfig::from_json(merged(j, flatten_json(v.overrides)));
}

std::size_t trainable_scalars(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.params().all())
    if (p.trainable) n += p.tensor.numel();
  return n;
}

}  // namespace

std::vector<AblationVariant> default_variants() {
  std::vector<AblationVariant> v;
  v.push_back({"qga", VariantInit::kScratch, json::object()});
  v.push_back({"woqg", VariantInit::kScratch, {{"model.fusion", "fixed_half"}}});
  v.push_back({"woal", VariantInit::kScratch, {{"model.alignment", false}}});
  v.push_back({"s-enc", VariantInit::kScratch, {{"model.single_encoder", true}}});
  v.push_back({"pre/no-moe", VariantInit::kPretrained, json::object()});
  for (const char* place : {"decoder-odd", "decoder-even", "encoder-all", "both-all"}) {
    const std::string p(place);
    const std::string site = p.substr(0, p.find('-'));
    const std::string layers = p.substr(p.find('-') + 1);
    for (const char* mode : {"full", "experts_only", "backbone_only"}) {
      v.push_back({fmt::format("pre/{}/{}", p, mode), VariantInit::kPretrained,
                   {{"moe.site", site}, {"moe.layers", layers}, {"moe.train_mode", mode}}});
    }
  }
  for (double lambda : {0.01, 0.1, 0.5}) {
    v.push_back({fmt::format("pre/decoder-odd/experts_only/lambda={}", lambda), VariantInit::kPretrained,
                 {{"moe.site", "decoder"}, {"moe.layers", "odd"}, {"moe.train_mode", "experts_only"},
                  {"moe.aux_weight", lambda}}});
  }
  return v;
}

AblationGrid AblationGrid::from_json(const json& j) {
  AblationGrid g;
  if (!j.is_object()) throw std::invalid_argument("grid: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "base" && it.key() != "finetune" && it.key() != "variants" && it.key() != "eval_limit") {
      throw std::invalid_argument(fmt::format("grid: unknown key '{}'", it.key()));
    }
  }
  g.base = RunConfig::from_json(j.value("base", json::object()));
  g.finetune = flatten_json(j.value("finetune", json::object()));
  g.eval_limit = j.value("eval_limit", std::size_t{0});
  if (j.contains("variants")) {
    for (const auto& e : j.at("variants")) {
      AblationVariant v;
      v.name = e.at("name").get<std::string>();
      const std::string init = e.value("init", std::string("scratch"));
      if (init == "scratch") {
        v.init = VariantInit::kScratch;
      } else if (init == "pretrained") {
        v.init = VariantInit::kPretrained;
      } else {
        throw std::invalid_argument(fmt::format("grid: variant '{}' has unknown init '{}'", v.name, init));
      }
      v.overrides = flatten_json(e.value("overrides", json::object()));
      g.variants.push_back(std::move(v));
    }
  } else {
    g.variants = default_variants();
  }
  return g;
}

json AblationGrid::to_json() const {
  json vs = json::array();
  for (const auto& v : variants) {
    vs.push_back({{"name", v.name}, {"init", v.init == VariantInit::kScratch ? "scratch" : "pretrained"},
                  {"overrides", v.overrides}});
  }
  return {{"base", base.to_json()}, {"finetune", finetune}, {"eval_limit", eval_limit}, {"variants", vs}};
}

json AblationRow::to_json() const {
  return {{"name", name},         {"init", init},
          {"status", status},     {"accuracy", accuracy},
          {"recall_at_90", recall_at_90}, {"params_trained", params_trained},
          {"wall_seconds", wall_seconds}, {"alpha_min", alpha_min},
          {"alpha_max", alpha_max}};
}

std::unique_ptr<Model> pretrain_backbone(const AblationGrid& grid, const Dataset& train) {
  RunConfig cfg = grid.base;
  cfg.model.placement = MoEPlacement{};
  auto model = std::make_unique<Model>(model_config_for(train.config, cfg.model));
  TrainState state = make_train_state(cfg);
  moemoe::train(*model, state, train, nullptr, cfg);
  return model;
}

AblationRow run_variant(const AblationGrid& grid, const AblationVariant& v, const Dataset& train, const Dataset& eval,
                        const Model* backbone) {
  AblationRow row;
  row.name = v.name;
  row.init = v.init == VariantInit::kScratch ? "scratch" : "pretrained";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const RunConfig cfg = variant_config(grid, v);
    ModelConfig mc = model_config_for(train.config, cfg.model);
    std::unique_ptr<Model> model;
    if (v.init == VariantInit::kPretrained) {
      if (backbone == nullptr) throw std::invalid_argument("pretrained row without a backbone");
      const MoEPlacement placement = mc.placement;
      mc.placement = MoEPlacement{};
      model = std::make_unique<Model>(mc);
      copy_parameter_values(*model, *backbone);
      if (placement.site != MoESite::kNone) {
        Rng moe_rng(derive_seed(mc.seed, 0x4d6f45));
        model->apply_placement(placement, mc.moe, moe_rng);
      }
      model->set_train_mode(placement.train_mode);
    } else {
      model = std::make_unique<Model>(mc);
    }
    row.params_trained = trainable_scalars(*model);
    TrainState state = make_train_state(cfg);
    moemoe::train(*model, state, train, nullptr, cfg);
    const auto preds = predict(*model, eval, grid.eval_limit);
    row.accuracy = accuracy(preds);
    row.recall_at_90 = recall_at_precision(preds, 0.90).recall;
    row.alpha_min = 1.0;
    row.alpha_max = 0.0;
    NoGradGuard guard;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, eval.samples.size()); ++i) {
      const ForwardContext ctx{false, nullptr, nullptr};
      const Tensor alpha = model->source_weights(model->encode(eval.samples[i], ctx)).alpha;
      for (double a : alpha.data()) {
        row.alpha_min = std::min(row.alpha_min, a);
        row.alpha_max = std::max(row.alpha_max, a);
      }
    }
  } catch (const std::exception& e) {
    row.status = fmt::format("failed: {}", e.what());
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const Dataset& train, const Dataset& eval,
                                      const RowCallback& on_row) {
  std::unique_ptr<Model> backbone;
  const bool needs_backbone = std::any_of(grid.variants.begin(), grid.variants.end(),
                                          [](const AblationVariant& v) { return v.init == VariantInit::kPretrained; });
  std::string backbone_error;
  if (needs_backbone) {
    try {
      backbone = pretrain_backbone(grid, train);
    } catch (const std::exception& e) {
      backbone_error = e.what();
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& v : grid.variants) {
    AblationRow row;
    if (v.init == VariantInit::kPretrained && !backbone) {
      row.name = v.name;
      row.init = "pretrained";
      row.status = fmt::format("failed: backbone training: {}", backbone_error);
    } else {
      row = run_variant(grid, v, train, eval, backbone.get());
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  std::string out = fmt::format("{:<{}} {:>10} {:>9} {:>12} {:>14} {:>9}  {}\n", "variant", w, "init", "accuracy",
                                "recall_at_90", "params_trained", "wall_s", "status");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}} {:>10} {:>9.4f} {:>12.4f} {:>14} {:>9.1f}  {}\n", r.name, w, r.init, r.accuracy,
                       r.recall_at_90, r.params_trained, r.wall_seconds, r.status);
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,init,accuracy,recall_at_90,params_trained,wall_seconds,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out += fmt::format("{},{},{:.6f},{:.6f},{},{:.3f},{}\n", r.name, r.init, r.accuracy, r.recall_at_90,
                       r.params_trained, r.wall_seconds, status);
  }
  return out;
}

}  // namespace moemoe
