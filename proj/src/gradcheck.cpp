// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "moemoe/model.hpp"

namespace moemoe {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

RunConfig gradcheck_run_config() {
  RunConfig c;
  c.model.block.d_model = 8;
  c.model.block.n_heads = 2;
  c.model.block.d_ff = 16;
  c.model.block.n_enc_layers = 2;
  c.model.block.n_dec_layers = 2;
  c.model.block.k = 8;
  c.model.block.vocab_size = 16;
  c.model.image_size = 8;
  c.model.patch_size = 4;
  c.model.max_decode_len = 4;
  c.model.aux_weight = 0.1;
  c.model.placement = MoEPlacement{MoESite::kDecoder, LayerSelector::kOdd, TrainMode::kFull};
  return c;
}

SynthConfig gradcheck_synth_config() {
  SynthConfig s;
  s.n_attributes = 4;
  s.n_values = 4;
  s.n_distractors = 5;
  s.k = 8;
  s.image_size = 8;
  s.patch_size = 4;
  s.n_train = 8;
  s.n_val = 0;
  s.n_test = 0;
  return s;
}

GradcheckReport run_gradcheck(const RunConfig& cfg, const SynthConfig& data, const GradcheckOptions& opt) {
  if (cfg.model.block.d_model > 16) {
    throw std::invalid_argument(fmt::format("gradcheck: d_model={} exceeds the limit of 16", cfg.model.block.d_model));
  }
  Model model(model_config_for(data, cfg.model));
  const Dataset ds = generate_range(data, 0, opt.batch_size);
  auto loss_value = [&] {
    NoGradGuard guard;
    return forward_batch(model, ds.samples, false, nullptr).breakdown.total;
  };

  BatchOutput out = forward_batch(model, ds.samples, false, nullptr);
  backward(out.total);

  std::vector<Parameter*> pool;
  for (auto& p : model.params().all())
    if (p.trainable) pool.push_back(&p);
  if (pool.empty()) throw std::invalid_argument("gradcheck: no trainable parameters");

  Rng rng(opt.seed);
  std::vector<std::pair<Parameter*, std::size_t>> picks;
  if (!opt.corrupt_parameter.empty()) {
    auto it = std::find_if(pool.begin(), pool.end(), [&](Parameter* p) { return p->name == opt.corrupt_parameter; });
    if (it == pool.end()) throw std::invalid_argument(fmt::format("gradcheck: no parameter named '{}'", opt.corrupt_parameter));
    picks.emplace_back(*it, 0);
  }
  while (picks.size() < opt.n_params) {
    Parameter* p = pool[rng.below(pool.size())];
    picks.emplace_back(p, rng.below(p->tensor.numel()));
  }

  GradcheckReport rep;
  rep.tolerance = opt.tolerance;
  for (auto [p, idx] : picks) {
    double analytic = p->tensor.has_grad() ? p->tensor.grad()[idx] : 0.0;
    if (p->name == opt.corrupt_parameter) analytic += 1.0;
    auto w = p->tensor.mutable_data();
    const double orig = w[idx];
    w[idx] = orig + opt.h;
    const double up = loss_value();
    w[idx] = orig - opt.h;
    const double down = loss_value();
    w[idx] = orig;
    const double numeric = (up - down) / (2.0 * opt.h);
    GradcheckEntry e{p->name, idx, analytic, numeric, relative_error(analytic, numeric)};
    if (rep.entries.empty() || e.rel_error > rep.worst.rel_error) rep.worst = e;
    rep.entries.push_back(std::move(e));
  }
  rep.passed = rep.worst.rel_error < opt.tolerance;
  return rep;
}

}  // namespace moemoe
