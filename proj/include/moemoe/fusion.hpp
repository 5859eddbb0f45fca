// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "moemoe/optim.hpp"
#include "moemoe/tensor.hpp"

namespace moemoe {

/// How per-token source weights are derived from the question embedding.
enum class FusionMode {
  kSoftmax,    // softmax over the two source logits per token
  kLinear,     // raw FC outputs used directly
  kFixedHalf,  // no question guidance: alpha = beta = 0.5
};

FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode m);

struct SourceWeights {
  Tensor alpha;  // [k] image weight
  Tensor beta;   // [k] context weight
  Tensor raw;    // [k x 2] FC outputs (normalized in softmax mode)
};

/// Per-token FC from question embedding to one logit per source.
class QgaHead {
 public:
  static constexpr std::size_t kSources = 2;

  QgaHead() = default;
  QgaHead(ParameterStore& store, const std::string& prefix, std::size_t d_model, Rng& rng);

  Tensor w;  // [d x 2]
  Tensor b;  // [2]
};

SourceWeights qga_weights(const Tensor& question, const QgaHead& head, FusionMode mode);

/// e_t = alpha_t * I_t + beta_t * C_t.
Tensor fuse(const Tensor& image, const Tensor& context, const SourceWeights& w);

/// Per-token linear map d -> 1 used before cosine alignment.
class AlignmentProjector {
 public:
  AlignmentProjector() = default;
  AlignmentProjector(ParameterStore& store, const std::string& prefix, std::size_t d_model, Rng& rng);

  /// [k x d] -> [k]
  Tensor project(const Tensor& x) const;

  Tensor w;  // [d x 1]
  Tensor b;  // [1]
};

/// |1 - cos(a, b)|; the norm product is floored at eps so zero vectors stay finite.
Tensor alignment_loss(const Tensor& a, const Tensor& b, double eps = 1e-8);

}  // namespace moemoe
