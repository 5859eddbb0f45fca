// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "moemoe/layers.hpp"
#include "moemoe/optim.hpp"
#include "moemoe/rng.hpp"
#include "moemoe/tensor.hpp"

namespace moemoe {

struct MoEConfig {
  std::size_t n_experts = 4;
  std::size_t k_top = 2;
  double noise_std = 1.0;
  /// Std of the per-expert perturbation applied after cloning the dense FFN.
  double clone_noise_std = 0.01;
  double gate_init_std = 0.1;
};

/// Sparse mixture of expert FFNs with noisy top-k gating.
class MoELayer {
 public:
  MoELayer() = default;
  /// Builds n experts as perturbed copies of `dense` and a fresh gate, all under `prefix`.
  MoELayer(ParameterStore& store, const std::string& prefix, const FeedForward& dense, const MoEConfig& cfg, Rng& rng);

  std::size_t n_experts() const { return experts.size(); }
  std::size_t width() const { return gate_weight.rows(); }

  std::string name;
  std::vector<FeedForward> experts;
  Tensor gate_weight;  // [d x n]
  std::size_t k_top = 1;
  double noise_std = 0.0;
};

/// Per-layer routing accumulator over a batch of tokens.
struct RoutingStats {
  std::size_t n = 0;
  std::vector<std::size_t> top1_counts;
  std::vector<double> weight_sums;
  std::size_t tokens = 0;
  /// Differentiable [1 x n] running sum of gate weights; undefined for hand-built stats.
  Tensor weight_sum_tensor;

  explicit RoutingStats(std::size_t n_experts = 0);

  double f(std::size_t i) const;
  double P(std::size_t i) const;
  /// Adds one token's gate weights (numeric only).
  void record(std::span<const double> weights);
  void merge_numeric(const RoutingStats& other);
};

using RoutingMap = std::map<std::string, RoutingStats>;

struct GateOutput {
  std::vector<double> weights;
  std::vector<std::size_t> top_set;
};

/// Indices of the k largest entries, ordered by value, ties to lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k);
/// Argmax with ties resolved to the lower index.
std::size_t argmax_lowest(std::span<const double> values);

/// Gate for one token: softmax(top_k(W^T x + noise)). Noise is drawn only when training.
GateOutput gate(std::span<const double> x, const MoELayer& layer, bool training, Rng* rng);

/// Weighted sum of the selected experts per token; appends routing to stats.
Tensor moe_forward(const Tensor& x, const MoELayer& layer, RoutingStats& stats, bool training, Rng* rng);

/// Dense oracle: evaluates every expert on every token and weights by the same gate output.
Tensor moe_forward_dense(const Tensor& x, const MoELayer& layer, bool training, Rng* rng);

/// n * sum_i f_i P_i, with f_i constant and P_i differentiable when available.
Tensor aux_loss(const RoutingStats& stats);

/// Mean of aux_loss over layers; scalar zero when there are no MoE layers.
Tensor mean_aux_loss(const RoutingMap& stats);

enum class MoESite { kNone, kEncoder, kDecoder, kBoth };
enum class LayerSelector { kAll, kEven, kOdd, kLast, kLast2 };
enum class TrainMode { kFull, kExpertsOnly, kBackboneOnly };

struct MoEPlacement {
  MoESite site = MoESite::kNone;
  LayerSelector layers = LayerSelector::kAll;
  TrainMode train_mode = TrainMode::kFull;
};

/// Block indices selected out of n_layers.
std::vector<std::size_t> resolve_layers(LayerSelector selector, std::size_t n_layers);

MoESite parse_site(const std::string& s);
LayerSelector parse_layer_selector(const std::string& s);
TrainMode parse_train_mode(const std::string& s);
std::string to_string(MoESite s);
std::string to_string(LayerSelector s);
std::string to_string(TrainMode m);

/// True for parameter names inside an MoE subtree (experts and gate).
bool is_moe_parameter(const std::string& name);

/// Sets trainable flags on the store per mode.
void set_train_mode(ParameterStore& store, TrainMode mode);

}  // namespace moemoe
