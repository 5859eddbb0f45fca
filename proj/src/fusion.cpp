// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/fusion.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "softmax") return FusionMode::kSoftmax;
  if (s == "linear") return FusionMode::kLinear;
  if (s == "fixed_half") return FusionMode::kFixedHalf;
  throw std::invalid_argument("unknown fusion mode: '" + s + "' (expected softmax|linear|fixed_half)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kSoftmax: return "softmax";
    case FusionMode::kLinear: return "linear";
    case FusionMode::kFixedHalf: return "fixed_half";
  }
  return "?";
}

QgaHead::QgaHead(ParameterStore& store, const std::string& prefix, std::size_t d_model, Rng& rng) {
  w = store.create(prefix + ".w", {d_model, kSources}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  b = store.create_constant(prefix + ".b", {kSources}, 0.0);
}

SourceWeights qga_weights(const Tensor& question, const QgaHead& head, FusionMode mode) {
  const std::size_t k = question.rows();
  SourceWeights out;
  if (mode == FusionMode::kFixedHalf) {
    out.raw = Tensor::full({k, QgaHead::kSources}, 0.5);
  } else {
    Tensor logits = add_bias(matmul(question, head.w), head.b);
    out.raw = mode == FusionMode::kSoftmax ? softmax(logits, 1) : logits;
  }
  out.alpha = column(out.raw, 0);
  out.beta = column(out.raw, 1);
  return out;
}

Tensor fuse(const Tensor& image, const Tensor& context, const SourceWeights& w) {
  if (image.shape() != context.shape()) {
    throw DimensionError(
        fmt::format("fuse: image {} and context {} differ", shape_str(image.shape()), shape_str(context.shape())));
  }
  if (w.alpha.numel() != image.rows() || w.beta.numel() != image.rows()) {
    throw DimensionError(fmt::format("fuse: {} token weights for {} rows", w.alpha.numel(), image.rows()));
  }
  return add(mul_rows(image, w.alpha), mul_rows(context, w.beta));
}

AlignmentProjector::AlignmentProjector(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                                       Rng& rng) {
  w = store.create(prefix + ".w", {d_model, 1}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  b = store.create_constant(prefix + ".b", {1}, 0.0);
}

Tensor AlignmentProjector::project(const Tensor& x) const {
  Tensor y = add_bias(matmul(x, w), b);
  return reshape(y, {x.rows()});
}

Tensor alignment_loss(const Tensor& a, const Tensor& b, double eps) {
  if (a.numel() != b.numel()) {
    throw DimensionError(fmt::format("alignment_loss: {} vs {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  Tensor ab = dot(a, b);
  const double aa = std::inner_product(a.data().begin(), a.data().end(), a.data().begin(), 0.0);
  const double bb = std::inner_product(b.data().begin(), b.data().end(), b.data().begin(), 0.0);
  Tensor cosine;
  if (std::sqrt(aa) * std::sqrt(bb) >= eps) {
    cosine = div(ab, sqrt(mul(dot(a, a), dot(b, b))));
  } else {
    cosine = scale(ab, 1.0 / eps);
  }
  return abs(add_scalar(scale(cosine, -1.0), 1.0));
}

}  // namespace moemoe
