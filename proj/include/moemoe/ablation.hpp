// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "moemoe/config.hpp"
#include "moemoe/data.hpp"
#include "moemoe/model.hpp"

namespace moemoe {

enum class VariantInit { kScratch, kPretrained };

struct AblationVariant {
  std::string name;
  VariantInit init = VariantInit::kScratch;
  /// Flat RunConfig keys applied on top of the grid base (and, for pretrained rows, the finetune overrides).
  nlohmann::json overrides = nlohmann::json::object();
};

struct AblationGrid {
  RunConfig base;
  /// Applied to every pretrained row before its own overrides (typically train.epochs and optim.lr).
  nlohmann::json finetune = nlohmann::json::object();
  std::vector<AblationVariant> variants;
  std::size_t eval_limit = 0;

  /// Grid file: {"base": {...}, "finetune": {...}, "eval_limit": n, "variants": [{"name", "init", "overrides"}]}.
  /// A missing "variants" list selects default_variants().
  static AblationGrid from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// WoQG, WoAL, S-Enc from scratch; placement x train-mode rows and the lambda sweep on a pretrained backbone.
std::vector<AblationVariant> default_variants();

struct AblationRow {
  std::string name;
  std::string init;
  std::string status = "ok";
  double accuracy = 0.0;
  double recall_at_90 = 0.0;
  std::size_t params_trained = 0;
  double wall_seconds = 0.0;
  /// Range of per-token alpha over a few eval samples.
  double alpha_min = 0.0;
  double alpha_max = 0.0;

  nlohmann::json to_json() const;
};

/// Backbone shared by pretrained rows: the base config without MoE, trained for base.train.epochs.
std::unique_ptr<Model> pretrain_backbone(const AblationGrid& grid, const Dataset& train);

/// One row. `backbone` is required for pretrained rows. Failures are returned as a row status, never thrown.
AblationRow run_variant(const AblationGrid& grid, const AblationVariant& v, const Dataset& train, const Dataset& eval,
                        const Model* backbone);

using RowCallback = std::function<void(const AblationRow&)>;
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const Dataset& train, const Dataset& eval,
                                      const RowCallback& on_row = {});

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace moemoe
