// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "moemoe/metrics.hpp"

namespace moemoe {

TrainState make_train_state(const RunConfig& cfg) {
  return TrainState{0, Adam(cfg.schedule, cfg.adam), Rng(cfg.train.seed)};
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["steps"] = steps;
  j["loss"] = {{"dec", loss.dec}, {"qca", loss.qca}, {"qia", loss.qia},
               {"aux", loss.aux}, {"lambda", loss.lambda}, {"total", loss.total}};
  nlohmann::json r = nlohmann::json::object();
  for (const auto& [name, st] : routing) {
    std::vector<double> f(st.n), p(st.n);
    for (std::size_t i = 0; i < st.n; ++i) {
      f[i] = st.f(i);
      p[i] = st.P(i);
    }
    r[name] = {{"tokens", st.tokens}, {"f", f}, {"P", p}};
  }
  j["routing"] = r;
  if (val_accuracy) {
    j["val"] = {{"n", val_n}, {"accuracy", *val_accuracy}, {"recall_at_90", *val_recall_at_90}};
  }
  return j;
}

EpochRecord train_epoch(Model& model, TrainState& state, const Dataset& train, std::size_t batch_size) {
  if (train.samples.empty()) throw std::invalid_argument("train: dataset is empty");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  const int epoch = state.epoch + 1;
  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = state.optimizer.schedule().lr_at(epoch);

  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  state.rng.shuffle(order);

  std::vector<Sample> batch;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) batch.push_back(train.samples[order[i]]);
    BatchOutput out = forward_batch(model, batch, true, &state.rng);
    const LossBreakdown& b = out.breakdown;
    if (!std::isfinite(b.total)) {
      throw DivergenceError(fmt::format("non-finite loss at epoch {} step {}: dec={} qca={} qia={} aux={}", epoch,
                                        rec.steps + 1, b.dec, b.qca, b.qia, b.aux));
    }
    backward(out.total);
    model.fill_missing_expert_grads();
    state.optimizer.step(model.params(), epoch);
    rec.loss.dec += b.dec;
    rec.loss.qca += b.qca;
    rec.loss.qia += b.qia;
    rec.loss.aux += b.aux;
    rec.loss.total += b.total;
    for (const auto& [name, st] : out.routing) {
      auto it = rec.routing.find(name);
      if (it == rec.routing.end()) it = rec.routing.emplace(name, RoutingStats(st.n)).first;
      it->second.merge_numeric(st);
    }
    ++rec.steps;
  }
  const double inv = 1.0 / static_cast<double>(rec.steps);
  rec.loss.dec *= inv;
  rec.loss.qca *= inv;
  rec.loss.qia *= inv;
  rec.loss.aux *= inv;
  rec.loss.total *= inv;
  rec.loss.lambda = model.config().aux_weight;
  state.epoch = epoch;
  return rec;
}

std::vector<EpochRecord> train(Model& model, TrainState& state, const Dataset& train_set, const Dataset* val,
                               const RunConfig& cfg, const EpochCallback& on_epoch) {
  std::vector<EpochRecord> log;
  while (state.epoch < cfg.train.epochs) {
    EpochRecord rec = train_epoch(model, state, train_set, cfg.train.batch_size);
    if (val != nullptr && !val->samples.empty()) {
      const auto preds = predict(model, *val, cfg.train.val_limit);
      rec.val_n = preds.size();
      rec.val_accuracy = accuracy(preds);
      rec.val_recall_at_90 = recall_at_precision(preds, 0.90).recall;
    }
    if (on_epoch) on_epoch(rec, state);
    log.push_back(std::move(rec));
  }
  return log;
}

}  // namespace moemoe
