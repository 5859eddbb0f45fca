// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

void ImageGrid::validate() const {
  if (channels == 0 || height == 0 || width == 0 || patch_size == 0) {
    throw std::invalid_argument("ImageGrid: extents must be positive");
  }
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw std::invalid_argument(
        fmt::format("ImageGrid: patch size {} does not divide {}x{}", patch_size, height, width));
  }
  if (pixels.size() != channels * height * width) {
    throw std::invalid_argument(
        fmt::format("ImageGrid: {} pixels for a {}x{}x{} grid", pixels.size(), channels, height, width));
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(pixels[i] >= 0.0 && pixels[i] <= 1.0)) {
      throw std::invalid_argument(fmt::format("ImageGrid: pixel {} = {} outside [0, 1]", i, pixels[i]));
    }
  }
}

Tensor ImageGrid::patches() const {
  validate();
  const std::size_t ph = height / patch_size, pw = width / patch_size;
  std::vector<double> out;
  out.reserve(patch_count() * patch_dim());
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < patch_size; ++y)
          for (std::size_t x = 0; x < patch_size; ++x) out.push_back(at(c, py * patch_size + y, px * patch_size + x));
  return Tensor::from({patch_count(), patch_dim()}, std::move(out));
}

TextEncoder::TextEncoder(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg,
                         std::size_t len, Rng& rng)
    : seq_len(len), vocab_size(cfg.vocab_size) {
  embed = store.create(prefix + ".embed", {cfg.vocab_size, cfg.d_model}, 1.0, rng);
  pos = store.create(prefix + ".pos", {len, cfg.d_model}, 0.1, rng);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    blocks.emplace_back(store, fmt::format("{}.block{}", prefix, i), cfg, rng);
  }
  ln_out = store.create_constant(prefix + ".ln_out", {cfg.d_model}, 1.0);
}

Tensor TextEncoder::forward(const std::vector<int>& ids, int pad_id, const ForwardContext& ctx) const {
  if (ids.size() != seq_len) {
    throw DimensionError(fmt::format("text encoder expects {} tokens, got {}", seq_len, ids.size()));
  }
  std::vector<std::size_t> rows(ids.size());
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
      throw std::out_of_range(fmt::format("token id {} at position {} outside vocabulary of {}", ids[i], i, vocab_size));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
    valid[i] = ids[i] != pad_id;
  }
  const Mask mask = Mask::key_padding(ids.size(), valid);
  Tensor x = add(gather_rows(embed, rows), pos);
  for (const auto& b : blocks) x = b.forward(x, &mask, ctx);
  return layer_norm(x, ln_out);
}

ImageEncoder::ImageEncoder(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg,
                           std::size_t patch_dim, std::size_t patches, Rng& rng)
    : n_patches(patches) {
  patch_w = store.create(prefix + ".patch_w", {patch_dim, cfg.d_model}, 1.0 / std::sqrt(static_cast<double>(patch_dim)),
                         rng);
  patch_b = store.create_constant(prefix + ".patch_b", {cfg.d_model}, 0.0);
  pos = store.create(prefix + ".pos", {patches, cfg.d_model}, 0.1, rng);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    blocks.emplace_back(store, fmt::format("{}.block{}", prefix, i), cfg, rng);
  }
  ln_out = store.create_constant(prefix + ".ln_out", {cfg.d_model}, 1.0);
}

Tensor ImageEncoder::forward(const ImageGrid& img, const ForwardContext& ctx) const {
  Tensor p = img.patches();
  if (p.rows() != n_patches || p.cols() != patch_w.rows()) {
    throw DimensionError(fmt::format("image encoder built for {} patches of {} values, got {}", n_patches,
                                     patch_w.rows(), shape_str(p.shape())));
  }
  Tensor x = add(add_bias(matmul(p, patch_w), patch_b), pos);
  for (const auto& b : blocks) x = b.forward(x, nullptr, ctx);
  return layer_norm(x, ln_out);
}

Tensor tile_to_k(const Tensor& patches, std::size_t k) {
  const std::size_t kp = patches.rows();
  if (kp == 0) throw DimensionError("tile_to_k: no patches");
  std::vector<std::size_t> idx(k);
  for (std::size_t j = 0; j < k; ++j) idx[j] = j % kp;
  return gather_rows(patches, idx);
}

}  // namespace moemoe
