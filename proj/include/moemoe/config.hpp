// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "moemoe/model.hpp"
#include "moemoe/optim.hpp"

namespace moemoe {

struct TrainConfig {
  std::size_t batch_size = 4;
  int epochs = 10;
  std::uint64_t seed = 11;
  /// Validation samples scored after each epoch; 0 scores the whole split.
  std::size_t val_limit = 0;
};

/// Every knob of a run. Serialized as one flat JSON object with dotted keys ("model.d_model", "moe.site", ...).
struct RunConfig {
  ModelConfig model;
  StepSchedule schedule;
  AdamConfig adam;
  TrainConfig train;
  std::string data_dir;
  std::string out_dir = "runs/default";

  void validate() const;
  nlohmann::json to_json() const;
  /// Accepts flat dotted keys or nested objects; unknown keys are an error. Missing keys keep defaults.
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::string& path);

/// Collapses nested objects into dotted keys; arrays are kept as values.
nlohmann::json flatten_json(const nlohmann::json& j);

}  // namespace moemoe
