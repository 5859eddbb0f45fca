// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

namespace {

using nlohmann::json;

struct Field {
  const char* key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};


#define MOEMOE_FIELD(KEY, EXPR, TYPE)                                                 \
  Field {                                                                             \
    KEY, [](const RunConfig& c) { return json(c.EXPR); },                             \
        [](RunConfig& c, const json& v) { c.EXPR = v.get<TYPE>(); }                   \
  }

#define MOEMOE_ENUM(KEY, EXPR, PARSE)                                                 \
  Field {                                                                             \
    KEY, [](const RunConfig& c) { return json(to_string(c.EXPR)); },                  \
        [](RunConfig& c, const json& v) { c.EXPR = PARSE(v.get<std::string>()); }    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MOEMOE_FIELD("model.k", model.block.k, std::size_t),
      MOEMOE_FIELD("model.d_model", model.block.d_model, std::size_t),
      MOEMOE_FIELD("model.n_heads", model.block.n_heads, std::size_t),
      MOEMOE_FIELD("model.d_ff", model.block.d_ff, std::size_t),
      MOEMOE_FIELD("model.n_enc_layers", model.block.n_enc_layers, std::size_t),
      MOEMOE_FIELD("model.n_dec_layers", model.block.n_dec_layers, std::size_t),
      MOEMOE_FIELD("model.vocab_size", model.block.vocab_size, std::size_t),
      MOEMOE_FIELD("model.image_channels", model.image_channels, std::size_t),
      MOEMOE_FIELD("model.image_size", model.image_size, std::size_t),
      MOEMOE_FIELD("model.patch_size", model.patch_size, std::size_t),
      MOEMOE_FIELD("model.max_decode_len", model.max_decode_len, std::size_t),
      MOEMOE_ENUM("model.fusion", model.fusion, parse_fusion_mode),
      MOEMOE_FIELD("model.alignment", model.alignment, bool),
      MOEMOE_FIELD("model.single_encoder", model.single_encoder, bool),
      MOEMOE_FIELD("model.seed", model.seed, std::uint64_t),
      MOEMOE_FIELD("moe.n_experts", model.moe.n_experts, std::size_t),
      MOEMOE_FIELD("moe.k_top", model.moe.k_top, std::size_t),
      MOEMOE_FIELD("moe.noise_std", model.moe.noise_std, double),
      MOEMOE_FIELD("moe.clone_noise_std", model.moe.clone_noise_std, double),
      MOEMOE_FIELD("moe.gate_init_std", model.moe.gate_init_std, double),
      MOEMOE_ENUM("moe.site", model.placement.site, parse_site),
      MOEMOE_ENUM("moe.layers", model.placement.layers, parse_layer_selector),
      MOEMOE_ENUM("moe.train_mode", model.placement.train_mode, parse_train_mode),
      MOEMOE_FIELD("moe.aux_weight", model.aux_weight, double),
      MOEMOE_FIELD("optim.lr", schedule.base_lr, double),
      MOEMOE_FIELD("optim.decay_factor", schedule.decay_factor, double),
      MOEMOE_FIELD("optim.decay_epochs", schedule.decay_epochs, std::vector<int>),
      MOEMOE_FIELD("optim.beta1", adam.beta1, double),
      MOEMOE_FIELD("optim.beta2", adam.beta2, double),
      MOEMOE_FIELD("optim.epsilon", adam.epsilon, double),
      MOEMOE_FIELD("train.batch_size", train.batch_size, std::size_t),
      MOEMOE_FIELD("train.epochs", train.epochs, int),
      MOEMOE_FIELD("train.seed", train.seed, std::uint64_t),
      MOEMOE_FIELD("train.val_limit", train.val_limit, std::size_t),
      MOEMOE_FIELD("data.dir", data_dir, std::string),
      MOEMOE_FIELD("out.dir", out_dir, std::string),
  };
  return table;
}

#undef MOEMOE_FIELD
#undef MOEMOE_ENUM

void flatten_into(const json& j, const std::string& prefix, json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten_into(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

}  // namespace

json flatten_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  json out = json::object();
  flatten_into(j, "", out);
  return out;
}

void RunConfig::validate() const {
  model.validate();
  if (train.batch_size == 0) throw std::invalid_argument("config: train.batch_size must be positive");
  if (train.epochs < 0) throw std::invalid_argument("config: train.epochs must be >= 0");
  if (schedule.base_lr < 0.0) throw std::invalid_argument("config: optim.lr must be >= 0");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw std::invalid_argument("config: optim betas must lie in [0, 1)");
  }
  if (adam.epsilon <= 0.0) throw std::invalid_argument("config: optim.epsilon must be positive");
  if (model.moe.k_top == 0 || model.moe.k_top > model.moe.n_experts) {
    throw std::invalid_argument(fmt::format("config: moe.k_top={} must lie in [1, moe.n_experts={}]", model.moe.k_top,
                                            model.moe.n_experts));
  }
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j;
}

RunConfig RunConfig::from_json(const json& raw) {
  const json flat = flatten_json(raw);
  RunConfig c;
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const auto& table = fields();
    auto f = std::find_if(table.begin(), table.end(), [&](const Field& x) { return it.key() == x.key; });
    if (f == table.end()) throw std::invalid_argument(fmt::format("config: unknown key '{}'", it.key()));
    try {
      f->set(c, *it);
    } catch (const json::exception& e) {
      throw std::invalid_argument(fmt::format("config: bad value for '{}': {}", it.key(), e.what()));
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("config: cannot open {}", path));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("config: {} is not valid JSON: {}", path, e.what()));
  }
  return RunConfig::from_json(j);
}

}  // namespace moemoe
