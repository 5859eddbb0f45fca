// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moemoe/layers.hpp"
#include "moemoe/moe.hpp"

namespace moemoe {

/// Mode switches threaded through a forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;            // gate noise stream; required when training with noise
  RoutingMap* routing = nullptr;  // receives per-MoE-layer stats when set
};

/// Dense FFN, or an MoE layer once placement has replaced it.
class ChannelMixer {
 public:
  ChannelMixer() = default;
  ChannelMixer(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_ff, Rng& rng);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  /// Swaps the dense FFN for an MoE layer seeded from it.
  void convert_to_moe(ParameterStore& store, const MoEConfig& cfg, Rng& rng);

  bool is_moe() const { return moe.has_value(); }

  std::string prefix;
  FeedForward ffn;
  std::optional<MoELayer> moe;
};

/// Pre-norm encoder block: x + MHA(LN(x)), then + FFN(LN(.)).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, const Mask* mask, const ForwardContext& ctx) const;

  Tensor ln_attn, ln_ffn;
  MultiHeadAttention attn;
  ChannelMixer mixer;
};

/// Pre-norm decoder block with causal self-attention and cross-attention over memory.
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& memory, const Mask* self_mask, const Mask* cross_mask,
                 const ForwardContext& ctx) const;

  Tensor ln_self, ln_cross, ln_ffn;
  MultiHeadAttention self_attn, cross_attn;
  ChannelMixer mixer;
};

}  // namespace moemoe
