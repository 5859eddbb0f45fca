// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/optim.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, t, true});
  return t;
}

Tensor ParameterStore::create(const std::string& name, Shape shape, double init_std, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = init_std == 0.0 ? 0.0 : rng.normal(0.0, init_std);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParameterStore::create_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, true));
}

void ParameterStore::erase_prefix(const std::string& prefix) {
  std::erase_if(params_, [&](const Parameter& p) { return p.name.rfind(prefix, 0) == 0; });
  reindex();
}

void ParameterStore::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double StepSchedule::lr_at(int epoch) const {
  double lr = base_lr;
  for (int e : decay_epochs)
    if (e <= epoch) lr *= decay_factor;
  return lr;
}

void Adam::step(ParameterStore& params, int epoch) {
  const double lr = schedule_.lr_at(epoch);
  for (auto& p : params.all()) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw std::logic_error(fmt::format("adam: trainable parameter '{}' has no gradient", p.name));
    }
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& p : params.all()) {
    if (p.trainable) {
      auto& mom = moments_[p.name];
      const std::size_t n = p.tensor.numel();
      if (mom.m.size() != n) {
        mom.m.assign(n, 0.0);
        mom.v.assign(n, 0.0);
      }
      auto w = p.tensor.mutable_data();
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < n; ++i) {
        mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
        mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
    if (p.tensor.has_grad()) p.tensor.zero_grad();
  }
}

}  // namespace moemoe
