// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moemoe/encoders.hpp"

namespace moemoe {

inline constexpr const char* kDatasetFormat = "moemoe-ds/1";

enum class SourceLabel { kContext, kImage, kBoth };

SourceLabel parse_source_label(const std::string& s);
std::string to_string(SourceLabel s);
bool has_context(SourceLabel s);
bool has_image(SourceLabel s);

/// Synthetic vocabulary: specials, then attribute, value, and distractor tokens.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSpecials = 3;

  Vocab(std::size_t n_attributes, std::size_t n_values, std::size_t n_distractors);

  std::size_t size() const { return names_.size(); }
  int attribute(std::size_t a) const;
  int value(std::size_t v) const;
  int distractor(std::size_t j) const;
  bool is_value(int id) const;
  std::size_t value_index(int id) const;

  const std::string& name(int id) const;
  int id(const std::string& token) const;

  /// Maps names to ids; throws std::invalid_argument on an unknown token.
  std::vector<int> tokenize(const std::vector<std::string>& tokens) const;
  std::vector<std::string> detokenize(const std::vector<int>& ids) const;

 private:
  std::size_t n_attributes_, n_values_, n_distractors_;
  std::vector<std::string> names_;
};

/// Pads with PAD or truncates to exactly k ids.
std::vector<int> pad_to(std::vector<int> ids, std::size_t k);

struct SynthConfig {
  std::size_t n_attributes = 8;
  std::size_t n_values = 8;
  std::size_t n_distractors = 16;
  std::size_t k = 32;
  std::size_t image_channels = 3;
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  double mix_context = 0.5;
  double mix_image = 0.25;
  double mix_both = 0.25;
  /// Probability that a sample uses its attribute's home source rather than a fresh mix draw.
  double source_affinity = 1.0;
  /// Probability that each non-queried attribute contributes a distractor pair.
  double distractor_pair_prob = 0.5;
  double pixel_noise = 0.05;
  std::size_t n_train = 5000;
  std::size_t n_val = 1000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 1234;

  void validate() const;
  Vocab vocab() const { return Vocab(n_attributes, n_values, n_distractors); }
  std::size_t slot_size() const { return k / n_attributes; }
  std::size_t patch_count() const { return (image_size / patch_size) * (image_size / patch_size); }

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
  bool operator==(const SynthConfig&) const = default;
};

struct Sample {
  std::uint64_t id = 0;
  std::vector<int> question;  // length k
  std::vector<int> context;   // length k
  ImageGrid image;
  std::vector<int> answer;  // value tokens, no EOS
  SourceLabel label = SourceLabel::kContext;
  std::size_t attribute = 0;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  SynthConfig config;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

struct DatasetSplits {
  Dataset train, val, test;
};

/// Home source of each attribute, allocated from the mix by largest remainder.
std::vector<SourceLabel> attribute_homes(const SynthConfig& cfg);

/// Deterministic in (cfg.seed, id) alone, so id-range shards concatenate to the serial output.
Sample generate_sample(const SynthConfig& cfg, std::uint64_t id);
Dataset generate_range(const SynthConfig& cfg, std::uint64_t first_id, std::size_t count);
DatasetSplits generate_dataset(const SynthConfig& cfg);

/// Image for a value code with per-pixel noise drawn from rng.
ImageGrid render_value_image(const SynthConfig& cfg, std::size_t value, Rng& rng);
/// Inverse of render_value_image (noise-robust thresholding).
std::size_t decode_image_value(const SynthConfig& cfg, const ImageGrid& img);

/// Generator inverse: reads the answer back out of one source, if that source carries it.
std::optional<std::vector<int>> recover_answer(const SynthConfig& cfg, const Sample& s, SourceLabel from);

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(const std::string& text);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
std::uint64_t dataset_checksum(const Dataset& ds);

}  // namespace moemoe
