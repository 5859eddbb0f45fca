// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moemoe/transformer.hpp"

namespace moemoe {

/// channels x height x width pixel grid in [0, 1], split into square patches.
struct ImageGrid {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t patch_size = 4;
  std::vector<double> pixels;  // row-major [c][y][x]

  void validate() const;
  std::size_t patch_count() const { return (height / patch_size) * (width / patch_size); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  /// [patch_count x patch_dim], patches in row-major grid order, each flattened [c][py][px].
  Tensor patches() const;

  bool operator==(const ImageGrid&) const = default;
};

/// Token-sequence encoder: embedding + learned positions + encoder blocks + final norm.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, std::size_t seq_len, Rng& rng);

  /// ids must have exactly seq_len entries; pad_id positions are masked as keys.
  Tensor forward(const std::vector<int>& ids, int pad_id, const ForwardContext& ctx) const;

  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  Tensor embed, pos, ln_out;
  std::vector<EncoderBlock> blocks;
};

/// Patch embedding + learned positions + encoder blocks + final norm.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(ParameterStore& store, const std::string& prefix, const BlockConfig& cfg, std::size_t patch_dim,
               std::size_t n_patches, Rng& rng);

  /// Returns the [k' x d] patch embeddings.
  Tensor forward(const ImageGrid& img, const ForwardContext& ctx) const;

  std::size_t n_patches = 0;
  Tensor patch_w, patch_b, pos, ln_out;
  std::vector<EncoderBlock> blocks;
};

/// Repeats the patch sequence until k rows, truncating the last copy: row j = patches row (j mod k').
Tensor tile_to_k(const Tensor& patches, std::size_t k);

struct SourceEmbeddings {
  Tensor question;     // [k x d]
  Tensor context;      // [k x d]
  Tensor image;        // [k x d], tiled
  Tensor raw_patches;  // [k' x d]
  std::vector<std::uint8_t> question_mask;
  std::vector<std::uint8_t> context_mask;
};

}  // namespace moemoe
