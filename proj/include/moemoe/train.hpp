// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "moemoe/config.hpp"
#include "moemoe/data.hpp"
#include "moemoe/model.hpp"

namespace moemoe {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything besides parameter values needed to continue a run.
struct TrainState {
  int epoch = 0;  // completed epochs
  Adam optimizer;
  Rng rng;
};

TrainState make_train_state(const RunConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  std::size_t steps = 0;
  LossBreakdown loss;  // means over the epoch's batches
  RoutingMap routing;  // token-level counts merged over the epoch
  std::optional<double> val_accuracy;
  std::optional<double> val_recall_at_90;
  std::size_t val_n = 0;

  nlohmann::json to_json() const;
};

/// One pass over `train` in a freshly shuffled order; advances state.epoch.
EpochRecord train_epoch(Model& model, TrainState& state, const Dataset& train, std::size_t batch_size);

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// Runs epochs state.epoch+1 .. cfg.train.epochs, scoring `val` (if given) after each.
std::vector<EpochRecord> train(Model& model, TrainState& state, const Dataset& train, const Dataset* val,
                               const RunConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace moemoe
