// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/transformer.hpp"

namespace moemoe {

ChannelMixer::ChannelMixer(ParameterStore& store, const std::string& p, std::size_t d_model, std::size_t d_ff,
                           Rng& rng)
    : prefix(p), ffn(store, p + ".ffn", d_model, d_ff, rng) {}

Tensor ChannelMixer::forward(const Tensor& x, const ForwardContext& ctx) const {
  if (!moe) return ffn.forward(x);
  if (ctx.routing) return moe_forward(x, *moe, (*ctx.routing)[moe->name], ctx.training, ctx.rng);
  RoutingStats scratch;
  return moe_forward(x, *moe, scratch, ctx.training, ctx.rng);
}

void ChannelMixer::convert_to_moe(ParameterStore& store, const MoEConfig& cfg, Rng& rng) {
  if (moe) return;
  moe.emplace(store, prefix + ".moe", ffn, cfg, rng);
  store.erase_prefix(prefix + ".ffn.");
  ffn = FeedForward{};
}

EncoderBlock::EncoderBlock(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : ln_attn(store.create_constant(prefix + ".ln_attn", {cfg.d_model}, 1.0)),
      ln_ffn(store.create_constant(prefix + ".ln_ffn", {cfg.d_model}, 1.0)),
      attn(store, prefix + ".attn", cfg.d_model, cfg.n_heads, rng),
      mixer(store, prefix, cfg.d_model, cfg.d_ff, rng) {}

Tensor EncoderBlock::forward(const Tensor& x, const Mask* mask, const ForwardContext& ctx) const {
  Tensor h = layer_norm(x, ln_attn);
  Tensor y = add(x, attn.forward(h, h, mask));
  return add(y, mixer.forward(layer_norm(y, ln_ffn), ctx));
}

DecoderBlock::DecoderBlock(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : ln_self(store.create_constant(prefix + ".ln_self", {cfg.d_model}, 1.0)),
      ln_cross(store.create_constant(prefix + ".ln_cross", {cfg.d_model}, 1.0)),
      ln_ffn(store.create_constant(prefix + ".ln_ffn", {cfg.d_model}, 1.0)),
      self_attn(store, prefix + ".self_attn", cfg.d_model, cfg.n_heads, rng),
      cross_attn(store, prefix + ".cross_attn", cfg.d_model, cfg.n_heads, rng),
      mixer(store, prefix, cfg.d_model, cfg.d_ff, rng) {}

Tensor DecoderBlock::forward(const Tensor& x, const Tensor& memory, const Mask* self_mask, const Mask* cross_mask,
                             const ForwardContext& ctx) const {
  Tensor h = layer_norm(x, ln_self);
  Tensor y = add(x, self_attn.forward(h, h, self_mask));
  y = add(y, cross_attn.forward(layer_norm(y, ln_cross), memory, cross_mask));
  return add(y, mixer.forward(layer_norm(y, ln_ffn), ctx));
}

}  // namespace moemoe
