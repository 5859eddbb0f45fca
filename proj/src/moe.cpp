// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/moe.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace moemoe {

namespace {

Tensor perturbed_clone(ParameterStore& store, const std::string& name, const Tensor& src, double std, Rng& rng) {
  std::vector<double> values = src.to_vector();
  for (double& v : values) v += rng.normal(0.0, std);
  Tensor t = store.create_constant(name, src.shape(), 0.0);
  std::copy(values.begin(), values.end(), t.mutable_data().begin());
  return t;
}

struct GateTape {
  Tensor weights;  // [k x n], differentiable through the gate weight
  Mask selected;   // top-k membership
};

GateTape gate_tokens(const Tensor& x, const MoELayer& layer, bool training, Rng* rng) {
  const std::size_t k = x.rows();
  const std::size_t n = layer.n_experts();
  Tensor logits = matmul(x, layer.gate_weight);
  if (training && layer.noise_std > 0.0) {
    if (!rng) throw std::invalid_argument("moe: training with gate noise requires an rng");
    std::vector<double> noise(k * n);
    for (double& v : noise) v = rng->normal(0.0, layer.noise_std);
    logits = add(logits, Tensor::from({k, n}, std::move(noise)));
  }
  Mask sel{k, n, std::vector<std::uint8_t>(k * n, 0)};
  auto lv = logits.data();
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i : top_k_indices(lv.subspan(t * n, n), layer.k_top)) sel.allowed[t * n + i] = 1;
  }
  return GateTape{masked_softmax(logits, sel), std::move(sel)};
}

void record_stats(RoutingStats& stats, const Tensor& weights) {
  const std::size_t k = weights.rows(), n = weights.cols();
  if (stats.n == 0) stats = RoutingStats(n);
  if (stats.n != n) throw std::invalid_argument("routing stats expert count mismatch");
  for (std::size_t t = 0; t < k; ++t) stats.record(weights.data().subspan(t * n, n));
  Tensor col_sum = matmul(Tensor::full({1, k}, 1.0), weights);
  stats.weight_sum_tensor = stats.weight_sum_tensor.defined() ? add(stats.weight_sum_tensor, col_sum) : col_sum;
}

}  // namespace

MoELayer::MoELayer(ParameterStore& store, const std::string& prefix, const FeedForward& dense, const MoEConfig& cfg,
                   Rng& rng)
    : name(prefix), k_top(cfg.k_top), noise_std(cfg.noise_std) {
  if (cfg.n_experts == 0 || cfg.k_top == 0 || cfg.k_top > cfg.n_experts) {
    throw std::invalid_argument(fmt::format("moe: need 1 <= k_top ({}) <= n_experts ({})", cfg.k_top, cfg.n_experts));
  }
  if (cfg.noise_std < 0.0) throw std::invalid_argument("moe: noise_std must be >= 0");
  const std::size_t d = dense.w1.rows();
  for (std::size_t i = 0; i < cfg.n_experts; ++i) {
    const std::string ep = fmt::format("{}.expert{}", prefix, i);
    FeedForward e;
    e.w1 = perturbed_clone(store, ep + ".w1", dense.w1, cfg.clone_noise_std, rng);
    e.b1 = perturbed_clone(store, ep + ".b1", dense.b1, cfg.clone_noise_std, rng);
    e.w2 = perturbed_clone(store, ep + ".w2", dense.w2, cfg.clone_noise_std, rng);
    e.b2 = perturbed_clone(store, ep + ".b2", dense.b2, cfg.clone_noise_std, rng);
    experts.push_back(std::move(e));
  }
  gate_weight = store.create(prefix + ".gate", {d, cfg.n_experts}, cfg.gate_init_std, rng);
}

RoutingStats::RoutingStats(std::size_t n_experts)
    : n(n_experts), top1_counts(n_experts, 0), weight_sums(n_experts, 0.0) {}

double RoutingStats::f(std::size_t i) const {
  return tokens == 0 ? 0.0 : static_cast<double>(top1_counts.at(i)) / static_cast<double>(tokens);
}

double RoutingStats::P(std::size_t i) const {
  return tokens == 0 ? 0.0 : weight_sums.at(i) / static_cast<double>(tokens);
}

void RoutingStats::record(std::span<const double> weights) {
  if (weights.size() != n) throw std::invalid_argument("RoutingStats::record: weight vector length mismatch");
  ++top1_counts[argmax_lowest(weights)];
  for (std::size_t i = 0; i < n; ++i) weight_sums[i] += weights[i];
  ++tokens;
}

void RoutingStats::merge_numeric(const RoutingStats& other) {
  if (n == 0) *this = RoutingStats(other.n);
  if (other.n != n) throw std::invalid_argument("RoutingStats::merge: expert count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    top1_counts[i] += other.top1_counts[i];
    weight_sums[i] += other.weight_sums[i];
  }
  tokens += other.tokens;
}

std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k) {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

GateOutput gate(std::span<const double> x, const MoELayer& layer, bool training, Rng* rng) {
  const std::size_t d = layer.width();
  if (x.size() != d) throw DimensionError(fmt::format("gate: input width {} != {}", x.size(), d));
  NoGradGuard no_grad;
  GateTape tape = gate_tokens(Tensor::from({1, d}, std::vector<double>(x.begin(), x.end())), layer, training, rng);
  GateOutput out;
  out.weights = tape.weights.to_vector();
  out.top_set = top_k_indices(out.weights, layer.k_top);
  return out;
}

Tensor moe_forward(const Tensor& x, const MoELayer& layer, RoutingStats& stats, bool training, Rng* rng) {
  if (x.dim() != 2 || x.cols() != layer.width()) {
    throw DimensionError(fmt::format("moe_forward: input {} does not match width {}", shape_str(x.shape()), layer.width()));
  }
  const std::size_t k = x.rows();
  const std::size_t n = layer.n_experts();
  GateTape tape = gate_tokens(x, layer, training, rng);
  record_stats(stats, tape.weights);

  Tensor out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> rows, flat;
    for (std::size_t t = 0; t < k; ++t) {
      if (tape.selected.ok(t, i)) {
        rows.push_back(t);
        flat.push_back(t * n + i);
      }
    }
    if (rows.empty()) continue;
    Tensor y = layer.experts[i].forward(gather_rows(x, rows));
    Tensor part = scatter_rows(mul_rows(y, gather(tape.weights, flat)), rows, k);
    out = out.defined() ? add(out, part) : part;
  }
  return out;
}

Tensor moe_forward_dense(const Tensor& x, const MoELayer& layer, bool training, Rng* rng) {
  const std::size_t n = layer.n_experts();
  GateTape tape = gate_tokens(x, layer, training, rng);
  Tensor out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor part = mul_rows(layer.experts[i].forward(x), column(tape.weights, i));
    out = out.defined() ? add(out, part) : part;
  }
  return out;
}

Tensor aux_loss(const RoutingStats& stats) {
  if (stats.tokens == 0) throw std::invalid_argument("aux_loss: routing stats hold no tokens");
  const double T = static_cast<double>(stats.tokens);
  std::vector<double> f(stats.n);
  for (std::size_t i = 0; i < stats.n; ++i) f[i] = stats.f(i);
  Tensor fv = Tensor::from({stats.n}, std::move(f));
  Tensor p;
  if (stats.weight_sum_tensor.defined()) {
    p = scale(stats.weight_sum_tensor, 1.0 / T);
  } else {
    std::vector<double> pv(stats.n);
    for (std::size_t i = 0; i < stats.n; ++i) pv[i] = stats.P(i);
    p = Tensor::from({stats.n}, std::move(pv));
  }
  return scale(dot(fv, p), static_cast<double>(stats.n));
}

Tensor mean_aux_loss(const RoutingMap& stats) {
  Tensor total;
  std::size_t layers = 0;
  for (const auto& [name, s] : stats) {
    if (s.tokens == 0) continue;
    Tensor a = aux_loss(s);
    total = total.defined() ? add(total, a) : a;
    ++layers;
  }
  if (layers == 0) return Tensor::scalar(0.0);
  return scale(total, 1.0 / static_cast<double>(layers));
}

std::vector<std::size_t> resolve_layers(LayerSelector selector, std::size_t n_layers) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_layers; ++i) {
    switch (selector) {
      case LayerSelector::kAll: out.push_back(i); break;
      case LayerSelector::kEven:
        if (i % 2 == 0) out.push_back(i);
        break;
      case LayerSelector::kOdd:
        if (i % 2 == 1) out.push_back(i);
        break;
      case LayerSelector::kLast:
        if (i + 1 == n_layers) out.push_back(i);
        break;
      case LayerSelector::kLast2:
        if (i + 2 >= n_layers) out.push_back(i);
        break;
    }
  }
  return out;
}

MoESite parse_site(const std::string& s) {
  if (s == "none") return MoESite::kNone;
  if (s == "encoder") return MoESite::kEncoder;
  if (s == "decoder") return MoESite::kDecoder;
  if (s == "both") return MoESite::kBoth;
  throw std::invalid_argument("unknown MoE site: '" + s + "' (expected none|encoder|decoder|both)");
}

LayerSelector parse_layer_selector(const std::string& s) {
  if (s == "all") return LayerSelector::kAll;
  if (s == "even") return LayerSelector::kEven;
  if (s == "odd") return LayerSelector::kOdd;
  if (s == "last") return LayerSelector::kLast;
  if (s == "last2") return LayerSelector::kLast2;
  throw std::invalid_argument("unknown layer selector: '" + s + "' (expected all|even|odd|last|last2)");
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "full") return TrainMode::kFull;
  if (s == "experts_only") return TrainMode::kExpertsOnly;
  if (s == "backbone_only") return TrainMode::kBackboneOnly;
  throw std::invalid_argument("unknown train mode: '" + s + "' (expected full|experts_only|backbone_only)");
}

std::string to_string(MoESite s) {
  switch (s) {
    case MoESite::kNone: return "none";
    case MoESite::kEncoder: return "encoder";
    case MoESite::kDecoder: return "decoder";
    case MoESite::kBoth: return "both";
  }
  return "?";
}

std::string to_string(LayerSelector s) {
  switch (s) {
    case LayerSelector::kAll: return "all";
    case LayerSelector::kEven: return "even";
    case LayerSelector::kOdd: return "odd";
    case LayerSelector::kLast: return "last";
    case LayerSelector::kLast2: return "last2";
  }
  return "?";
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kFull: return "full";
    case TrainMode::kExpertsOnly: return "experts_only";
    case TrainMode::kBackboneOnly: return "backbone_only";
  }
  return "?";
}

bool is_moe_parameter(const std::string& name) { return name.find(".moe.") != std::string::npos; }

void set_train_mode(ParameterStore& store, TrainMode mode) {
  for (auto& p : store.all()) {
    const bool moe = is_moe_parameter(p.name);
    switch (mode) {
      case TrainMode::kFull: p.trainable = true; break;
      case TrainMode::kExpertsOnly: p.trainable = moe; break;
      case TrainMode::kBackboneOnly: p.trainable = !moe; break;
    }
    p.tensor.set_requires_grad(p.trainable);
  }
}

}  // namespace moemoe
