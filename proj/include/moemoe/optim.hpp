// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "moemoe/rng.hpp"
#include "moemoe/tensor.hpp"

namespace moemoe {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Named registry of every learned tensor in a model, in insertion order.
class ParameterStore {
 public:
  /// Registers a new parameter. Throws if the name is taken.
  Tensor create(const std::string& name, Shape shape, double init_std, Rng& rng);
  Tensor create_constant(const std::string& name, Shape shape, double value);
  void erase_prefix(const std::string& prefix);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  void reindex();
  Tensor add(const std::string& name, Tensor t);

  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Step schedule: base_lr * decay_factor^(number of decay epochs <= epoch).
struct StepSchedule {
  double base_lr = 1e-3;
  double decay_factor = 0.2;
  std::vector<int> decay_epochs{6, 9};

  double lr_at(int epoch) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct MomentPair {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam with bias correction. Moments are keyed by parameter name.
class Adam {
 public:
  Adam(StepSchedule schedule = {}, AdamConfig config = {}) : schedule_(std::move(schedule)), config_(config) {}

  /// Updates every trainable parameter at the schedule's lr for `epoch`, then clears all grads.
  void step(ParameterStore& params, int epoch);

  const StepSchedule& schedule() const { return schedule_; }
  StepSchedule& schedule() { return schedule_; }
  const AdamConfig& config() const { return config_; }
  std::size_t step_count() const { return step_count_; }
  void set_step_count(std::size_t n) { step_count_ = n; }
  std::map<std::string, MomentPair>& moments() { return moments_; }
  const std::map<std::string, MomentPair>& moments() const { return moments_; }

 private:
  StepSchedule schedule_;
  AdamConfig config_;
  std::size_t step_count_ = 0;
  std::map<std::string, MomentPair> moments_;
};

}  // namespace moemoe
