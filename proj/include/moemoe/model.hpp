// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moemoe/data.hpp"
#include "moemoe/encoders.hpp"
#include "moemoe/fusion.hpp"
#include "moemoe/moe.hpp"
#include "moemoe/transformer.hpp"

namespace moemoe {

struct ModelConfig {
  BlockConfig block;
  std::size_t image_channels = 3;
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  /// Decoder positions available; teacher-forced length is answer length + 1.
  std::size_t max_decode_len = 8;
  FusionMode fusion = FusionMode::kSoftmax;
  bool alignment = true;
  /// Question and context share one encoder over their concatenation; forces fixed-half fusion.
  bool single_encoder = false;
  double aux_weight = 0.1;
  MoEConfig moe;
  MoEPlacement placement;
  std::uint64_t seed = 7;

  std::size_t patch_count() const { return (image_size / patch_size) * (image_size / patch_size); }
  void validate() const;
};

/// Model dimensions matching a dataset's vocabulary, sequence length and image geometry.
ModelConfig model_config_for(const SynthConfig& data, ModelConfig base);

/// Throws std::invalid_argument naming the first field where a dataset does not fit the model.
void check_compatible(const ModelConfig& model, const SynthConfig& data);

/// Numeric loss components for one batch.
struct LossBreakdown {
  double dec = 0.0;
  double qca = 0.0;
  double qia = 0.0;
  double aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

struct LossTerms {
  Tensor dec, qca, qia, aux;
  double lambda = 0.0;
};

/// dec + qca + qia + lambda * aux.
Tensor joint_loss(const LossTerms& terms);
double joint_loss(double dec, double qca, double qia, double aux, double lambda);

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Replaces the dense FFN at each selected site with an MoE layer and records the placement.
  void apply_placement(const MoEPlacement& placement, const MoEConfig& moe_cfg, Rng& rng);
  void set_train_mode(TrainMode mode);
  std::vector<const MoELayer*> moe_layers() const;
  /// Experts that no token was routed to get an explicit zero gradient.
  void fill_missing_expert_grads();

  SourceEmbeddings encode(const Sample& s, const ForwardContext& ctx) const;
  SourceWeights source_weights(const SourceEmbeddings& emb) const;
  /// Decoder logits [T x V] for input ids over memory e.
  Tensor decode(const std::vector<int>& input_ids, const Tensor& memory, const ForwardContext& ctx) const;

  TextEncoder question_encoder, context_encoder, joint_encoder;
  ImageEncoder image_encoder;
  QgaHead qga;
  AlignmentProjector align_question, align_context, align_image;
  Tensor dec_embed, dec_pos, dec_ln_out, out_w, out_b;
  std::vector<DecoderBlock> decoder;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

struct SampleOutput {
  Tensor logits;
  Tensor dec, qca, qia;
  SourceWeights weights;
  Tensor fused;
};

struct BatchOutput {
  std::vector<SampleOutput> samples;
  LossTerms terms;
  Tensor total;
  LossBreakdown breakdown;
  RoutingMap routing;
};

/// Teacher-forced decoder input [BOS, answer...] and targets [answer..., EOS].
std::vector<int> decoder_inputs(const Sample& s);
std::vector<int> decoder_targets(const Sample& s);

SampleOutput forward_sample(const Model& model, const Sample& s, const ForwardContext& ctx);
/// Mean of per-sample losses plus lambda times the batch aux loss (MoE layers averaged).
BatchOutput forward_batch(const Model& model, std::span<const Sample> batch, bool training, Rng* rng);

struct Generation {
  std::vector<int> tokens;  // without EOS
  double confidence = 0.0;  // geometric mean of chosen-token probabilities
};

/// Greedy decode in eval mode (no gate noise) until EOS or max_len tokens.
Generation generate(const Model& model, const Sample& s, std::size_t max_len);

/// Copies values of every same-named, same-shaped parameter from src; returns the number copied.
std::size_t copy_parameter_values(Model& dst, const Model& src);

/// Mean alpha over the k tokens of one sample, in eval mode.
double mean_alpha(const Model& model, const Sample& s);

}  // namespace moemoe
