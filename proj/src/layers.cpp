// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/layers.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

void BlockConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_ff == 0 || k == 0 || vocab_size == 0 || n_enc_layers == 0 ||
      n_dec_layers == 0) {
    throw std::invalid_argument("BlockConfig: all extents must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument(fmt::format("BlockConfig: d_model {} not divisible by n_heads {}", d_model, n_heads));
  }
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                                       std::size_t heads, Rng& rng)
    : n_heads(heads) {
  if (d_model % heads != 0) throw std::invalid_argument("MultiHeadAttention: d_model must divide by n_heads");
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  wq = store.create(prefix + ".wq", {d_model, d_model}, s, rng);
  wk = store.create(prefix + ".wk", {d_model, d_model}, s, rng);
  wv = store.create(prefix + ".wv", {d_model, d_model}, s, rng);
  wo = store.create(prefix + ".wo", {d_model, d_model}, s, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in, const Mask* mask,
                                   std::vector<Tensor>* weights_out) const {
  const std::size_t d = wq.rows();
  if (q_in.dim() != 2 || kv_in.dim() != 2 || q_in.cols() != d || kv_in.cols() != d) {
    throw DimensionError(fmt::format("attention: inputs {} / {} must have width {}", shape_str(q_in.shape()),
                                     shape_str(kv_in.shape()), d));
  }
  const Mask full = mask ? Mask{} : Mask::all(q_in.rows(), kv_in.rows());
  const Mask& m = mask ? *mask : full;
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = matmul(q_in, wq);
  Tensor kk = matmul(kv_in, wk);
  Tensor v = matmul(kv_in, wv);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor kh = n_heads == 1 ? kk : slice_cols(kk, h * dh, dh);
    Tensor vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor attn = masked_softmax(scores, m);
    if (weights_out) weights_out->push_back(attn);
    heads.push_back(matmul(attn, vh));
  }
  Tensor joined = n_heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(joined, wo);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_ff,
                         Rng& rng) {
  w1 = store.create(prefix + ".w1", {d_model, d_ff}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  b1 = store.create_constant(prefix + ".b1", {d_ff}, 0.0);
  w2 = store.create(prefix + ".w2", {d_ff, d_model}, 1.0 / std::sqrt(static_cast<double>(d_ff)), rng);
  b2 = store.create_constant(prefix + ".b2", {d_model}, 0.0);
}

Tensor FeedForward::forward(const Tensor& x) const {
  Tensor h = relu(add_bias(matmul(x, w1), b1));
  return add_bias(matmul(h, w2), b2);
}

}  // namespace moemoe
