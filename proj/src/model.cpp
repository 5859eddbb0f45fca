// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

void ModelConfig::validate() const {
  block.validate();
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument(fmt::format("model: patch size {} does not divide image size {}", patch_size, image_size));
  }
  if (patch_count() > block.k) {
    throw std::invalid_argument(fmt::format("model: {} patches exceed k={}", patch_count(), block.k));
  }
  if (max_decode_len < 2) throw std::invalid_argument("model: max_decode_len must be >= 2");
  if (aux_weight < 0.0) throw std::invalid_argument("model: aux_weight must be >= 0");
}

ModelConfig model_config_for(const SynthConfig& data, ModelConfig base) {
  base.block.k = data.k;
  base.block.vocab_size = data.vocab().size();
  base.image_channels = data.image_channels;
  base.image_size = data.image_size;
  base.patch_size = data.patch_size;
  return base;
}

void check_compatible(const ModelConfig& m, const SynthConfig& d) {
  auto need = [](const char* what, std::size_t model_v, std::size_t data_v) {
    if (model_v != data_v) {
      throw std::invalid_argument(fmt::format("{} mismatch: model has {}, dataset has {}", what, model_v, data_v));
    }
  };
  need("vocabulary size", m.block.vocab_size, d.vocab().size());
  need("sequence length k", m.block.k, d.k);
  need("image channels", m.image_channels, d.image_channels);
  need("image size", m.image_size, d.image_size);
  need("patch size", m.patch_size, d.patch_size);
}

Tensor joint_loss(const LossTerms& t) { return add(add(add(t.dec, t.qca), t.qia), scale(t.aux, t.lambda)); }

double joint_loss(double dec, double qca, double qia, double aux, double lambda) {
  return dec + qca + qia + lambda * aux;
}

Model::Model(const ModelConfig& cfg) : config_(cfg) {
  config_.validate();
  if (config_.single_encoder) config_.fusion = FusionMode::kFixedHalf;
  const MoEPlacement placement = config_.placement;
  config_.placement = MoEPlacement{};
  const BlockConfig& b = config_.block;
  Rng rng(config_.seed);

  if (config_.single_encoder) {
    joint_encoder = TextEncoder(params_, "encoder.joint", b, 2 * b.k, rng);
  } else {
    question_encoder = TextEncoder(params_, "encoder.question", b, b.k, rng);
    context_encoder = TextEncoder(params_, "encoder.context", b, b.k, rng);
  }
  image_encoder = ImageEncoder(params_, "encoder.image", b, config_.image_channels * config_.patch_size * config_.patch_size,
                               config_.patch_count(), rng);
  // Heads a variant never uses are drawn into a discarded store so every other
  // parameter gets the same initial values as in the full model.
  ParameterStore unused;
  ParameterStore& qga_store = config_.fusion == FusionMode::kFixedHalf ? unused : params_;
  ParameterStore& align_store = config_.alignment ? params_ : unused;
  qga = QgaHead(qga_store, "qga.fc", b.d_model, rng);
  align_question = AlignmentProjector(align_store, "align.question", b.d_model, rng);
  align_context = AlignmentProjector(align_store, "align.context", b.d_model, rng);
  align_image = AlignmentProjector(align_store, "align.image", b.d_model, rng);

  dec_embed = params_.create("decoder.embed", {b.vocab_size, b.d_model}, 1.0, rng);
  dec_pos = params_.create("decoder.pos", {config_.max_decode_len, b.d_model}, 0.1, rng);
  for (std::size_t i = 0; i < b.n_dec_layers; ++i) decoder.emplace_back(params_, fmt::format("decoder.block{}", i), b, rng);
  dec_ln_out = params_.create_constant("decoder.ln_out", {b.d_model}, 1.0);
  out_w = params_.create("decoder.out_w", {b.d_model, b.vocab_size}, 1.0 / std::sqrt(static_cast<double>(b.d_model)), rng);
  out_b = params_.create_constant("decoder.out_b", {b.vocab_size}, 0.0);

  if (placement.site != MoESite::kNone) {
    Rng moe_rng(derive_seed(config_.seed, 0x4d6f45));
    apply_placement(placement, config_.moe, moe_rng);
  }
  set_train_mode(config_.placement.train_mode);
}

void Model::apply_placement(const MoEPlacement& placement, const MoEConfig& moe_cfg, Rng& rng) {
  const BlockConfig& b = config_.block;
  auto convert = [&](std::vector<EncoderBlock>& blocks) {
    for (std::size_t i : resolve_layers(placement.layers, blocks.size())) blocks[i].mixer.convert_to_moe(params_, moe_cfg, rng);
  };
  if (placement.site == MoESite::kEncoder || placement.site == MoESite::kBoth) {
    if (resolve_layers(placement.layers, b.n_enc_layers).empty()) {
      throw std::invalid_argument(fmt::format("placement: selector '{}' picks no encoder block out of {}",
                                              to_string(placement.layers), b.n_enc_layers));
    }
    convert(question_encoder.blocks);
    convert(context_encoder.blocks);
    convert(joint_encoder.blocks);
    convert(image_encoder.blocks);
  }
  if (placement.site == MoESite::kDecoder || placement.site == MoESite::kBoth) {
    const auto idx = resolve_layers(placement.layers, decoder.size());
    if (idx.empty()) {
      throw std::invalid_argument(fmt::format("placement: selector '{}' picks no decoder block out of {}",
                                              to_string(placement.layers), decoder.size()));
    }
    for (std::size_t i : idx) decoder[i].mixer.convert_to_moe(params_, moe_cfg, rng);
  }
  config_.placement = placement;
  config_.moe = moe_cfg;
}

void Model::set_train_mode(TrainMode mode) {
  moemoe::set_train_mode(params_, mode);
  config_.placement.train_mode = mode;
}

void Model::fill_missing_expert_grads() {
  for (const MoELayer* layer : moe_layers()) {
    for (const FeedForward& e : layer->experts) {
      for (Tensor t : {e.w1, e.b1, e.w2, e.b2}) {
        if (t.requires_grad() && !t.has_grad()) t.zero_grad();
      }
    }
  }
}

std::vector<const MoELayer*> Model::moe_layers() const {
  std::vector<const MoELayer*> out;
  auto scan = [&](const std::vector<EncoderBlock>& blocks) {
    for (const auto& blk : blocks)
      if (blk.mixer.moe) out.push_back(&*blk.mixer.moe);
  };
  scan(question_encoder.blocks);
  scan(context_encoder.blocks);
  scan(joint_encoder.blocks);
  scan(image_encoder.blocks);
  for (const auto& blk : decoder)
    if (blk.mixer.moe) out.push_back(&*blk.mixer.moe);
  return out;
}

SourceEmbeddings Model::encode(const Sample& s, const ForwardContext& ctx) const {
  const std::size_t k = config_.block.k;
  SourceEmbeddings emb;
  emb.question_mask.resize(k);
  emb.context_mask.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    emb.question_mask[i] = s.question.at(i) != Vocab::kPad;
    emb.context_mask[i] = s.context.at(i) != Vocab::kPad;
  }
  if (config_.single_encoder) {
    std::vector<int> joint = s.question;
    joint.insert(joint.end(), s.context.begin(), s.context.end());
    Tensor h = joint_encoder.forward(joint, Vocab::kPad, ctx);
    emb.question = slice_rows(h, 0, k);
    emb.context = slice_rows(h, k, k);
  } else {
    emb.question = question_encoder.forward(s.question, Vocab::kPad, ctx);
    emb.context = context_encoder.forward(s.context, Vocab::kPad, ctx);
  }
  emb.raw_patches = image_encoder.forward(s.image, ctx);
  emb.image = tile_to_k(emb.raw_patches, k);
  return emb;
}

SourceWeights Model::source_weights(const SourceEmbeddings& emb) const { return qga_weights(emb.question, qga, config_.fusion); }

Tensor Model::decode(const std::vector<int>& input_ids, const Tensor& memory, const ForwardContext& ctx) const {
  const std::size_t T = input_ids.size();
  if (T == 0 || T > config_.max_decode_len) {
    throw DimensionError(fmt::format("decoder input length {} outside [1, {}]", T, config_.max_decode_len));
  }
  std::vector<std::size_t> rows(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (input_ids[t] < 0 || static_cast<std::size_t>(input_ids[t]) >= config_.block.vocab_size) {
      throw std::out_of_range(fmt::format("decoder token id {} outside vocabulary", input_ids[t]));
    }
    rows[t] = static_cast<std::size_t>(input_ids[t]);
  }
  const Mask causal = Mask::causal(T);
  Tensor x = add(gather_rows(dec_embed, rows), slice_rows(dec_pos, 0, T));
  for (const auto& blk : decoder) x = blk.forward(x, memory, &causal, nullptr, ctx);
  return add_bias(matmul(layer_norm(x, dec_ln_out), out_w), out_b);
}

std::vector<int> decoder_inputs(const Sample& s) {
  std::vector<int> ids{Vocab::kBos};
  ids.insert(ids.end(), s.answer.begin(), s.answer.end());
  return ids;
}

std::vector<int> decoder_targets(const Sample& s) {
  std::vector<int> ids = s.answer;
  ids.push_back(Vocab::kEos);
  return ids;
}

SampleOutput forward_sample(const Model& model, const Sample& s, const ForwardContext& ctx) {
  SampleOutput out;
  SourceEmbeddings emb = model.encode(s, ctx);
  out.weights = model.source_weights(emb);
  out.fused = fuse(emb.image, emb.context, out.weights);
  out.logits = model.decode(decoder_inputs(s), out.fused, ctx);
  out.dec = cross_entropy(out.logits, decoder_targets(s), Vocab::kPad);
  if (model.config().alignment) {
    Tensor qp = model.align_question.project(emb.question);
    out.qca = alignment_loss(qp, model.align_context.project(emb.context));
    out.qia = alignment_loss(qp, model.align_image.project(emb.image));
  } else {
    out.qca = Tensor::scalar(0.0);
    out.qia = Tensor::scalar(0.0);
  }
  return out;
}

BatchOutput forward_batch(const Model& model, std::span<const Sample> batch, bool training, Rng* rng) {
  if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
  BatchOutput out;
  ForwardContext ctx{training, rng, &out.routing};
  Tensor dec, qca, qia;
  for (const Sample& s : batch) {
    SampleOutput so = forward_sample(model, s, ctx);
    dec = dec.defined() ? add(dec, so.dec) : so.dec;
    qca = qca.defined() ? add(qca, so.qca) : so.qca;
    qia = qia.defined() ? add(qia, so.qia) : so.qia;
    out.samples.push_back(std::move(so));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.terms.dec = scale(dec, inv);
  out.terms.qca = scale(qca, inv);
  out.terms.qia = scale(qia, inv);
  out.terms.aux = mean_aux_loss(out.routing);
  out.terms.lambda = model.config().aux_weight;
  out.total = joint_loss(out.terms);
  out.breakdown = LossBreakdown{out.terms.dec.item(), out.terms.qca.item(), out.terms.qia.item(),
                                out.terms.aux.item(), out.terms.lambda, out.total.item()};
  return out;
}

Generation generate(const Model& model, const Sample& s, std::size_t max_len) {
  NoGradGuard no_grad;
  ForwardContext ctx{false, nullptr, nullptr};
  SourceEmbeddings emb = model.encode(s, ctx);
  Tensor fused = fuse(emb.image, emb.context, model.source_weights(emb));
  const std::size_t limit = std::min(max_len, model.config().max_decode_len - 1);
  std::vector<int> ids{Vocab::kBos};
  Generation g;
  double log_conf = 0.0;
  std::size_t steps = 0;
  while (steps < std::max<std::size_t>(limit, 1)) {
    Tensor logits = model.decode(ids, fused, ctx);
    const std::size_t V = logits.cols();
    auto row = logits.data().subspan((ids.size() - 1) * V, V);
    std::size_t best = 0;
    double mx = row[0];
    for (std::size_t v = 1; v < V; ++v)
      if (row[v] > mx) {
        mx = row[v];
        best = v;
      }
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    log_conf += -std::log(z);  // log p(best) = (row[best] - mx) - log z
    ++steps;
    const int tok = static_cast<int>(best);
    if (tok == Vocab::kEos) break;
    g.tokens.push_back(tok);
    ids.push_back(tok);
    if (ids.size() >= model.config().max_decode_len) break;
  }
  g.confidence = std::exp(log_conf / static_cast<double>(steps));
  return g;
}

std::size_t copy_parameter_values(Model& dst, const Model& src) {
  std::size_t copied = 0;
  for (auto& p : dst.params().all()) {
    if (!src.params().contains(p.name)) continue;
    const Tensor& from = src.params().get(p.name).tensor;
    if (from.shape() != p.tensor.shape()) continue;
    auto out = p.tensor.mutable_data();
    std::copy(from.data().begin(), from.data().end(), out.begin());
    ++copied;
  }
  return copied;
}

double mean_alpha(const Model& model, const Sample& s) {
  NoGradGuard no_grad;
  ForwardContext ctx{false, nullptr, nullptr};
  SourceEmbeddings emb = model.encode(s, ctx);
  Tensor alpha = model.source_weights(emb).alpha;
  double acc = 0.0;
  for (double a : alpha.data()) acc += a;
  return acc / static_cast<double>(alpha.numel());
}

}  // namespace moemoe
