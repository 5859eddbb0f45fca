// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "moemoe/optim.hpp"
#include "moemoe/rng.hpp"
#include "moemoe/tensor.hpp"

namespace moemoe {

struct BlockConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t k = 32;
  std::size_t vocab_size = 40;

  void validate() const;
};

/// Scaled dot-product attention over n_heads heads with bias-free projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t n_heads, Rng& rng);

  /// q_in [k_q x d], kv_in [k_v x d]. A null mask lets every query see every key.
  /// When weights_out is given it receives one [k_q x k_v] attention map per head.
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Mask* mask,
                 std::vector<Tensor>* weights_out = nullptr) const;

  Tensor wq, wk, wv, wo;
  std::size_t n_heads = 1;
};

/// relu(x W1 + b1) W2 + b2. The residual is added by the caller.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_ff, Rng& rng);

  Tensor forward(const Tensor& x) const;

  Tensor w1, b1, w2, b2;
};

}  // namespace moemoe
