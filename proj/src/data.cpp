// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "moemoe/bytes.hpp"

namespace moemoe {

using nlohmann::json;

SourceLabel parse_source_label(const std::string& s) {
  if (s == "context") return SourceLabel::kContext;
  if (s == "image") return SourceLabel::kImage;
  if (s == "both") return SourceLabel::kBoth;
  throw std::invalid_argument("unknown source label: '" + s + "'");
}

std::string to_string(SourceLabel s) {
  switch (s) {
    case SourceLabel::kContext: return "context";
    case SourceLabel::kImage: return "image";
    case SourceLabel::kBoth: return "both";
  }
  return "?";
}

bool has_context(SourceLabel s) { return s != SourceLabel::kImage; }
bool has_image(SourceLabel s) { return s != SourceLabel::kContext; }

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::size_t n_attributes, std::size_t n_values, std::size_t n_distractors)
    : n_attributes_(n_attributes), n_values_(n_values), n_distractors_(n_distractors) {
  names_ = {"<pad>", "<bos>", "<eos>"};
  for (std::size_t a = 0; a < n_attributes; ++a) names_.push_back(fmt::format("attr_{}", a));
  for (std::size_t v = 0; v < n_values; ++v) names_.push_back(fmt::format("val_{}", v));
  for (std::size_t j = 0; j < n_distractors; ++j) names_.push_back(fmt::format("w_{}", j));
}

int Vocab::attribute(std::size_t a) const {
  if (a >= n_attributes_) throw std::out_of_range("attribute index out of range");
  return static_cast<int>(kSpecials + a);
}

int Vocab::value(std::size_t v) const {
  if (v >= n_values_) throw std::out_of_range("value index out of range");
  return static_cast<int>(kSpecials + n_attributes_ + v);
}

int Vocab::distractor(std::size_t j) const {
  if (j >= n_distractors_) throw std::out_of_range("distractor index out of range");
  return static_cast<int>(kSpecials + n_attributes_ + n_values_ + j);
}

bool Vocab::is_value(int id) const {
  const int lo = value(0);
  return id >= lo && id < lo + static_cast<int>(n_values_);
}

std::size_t Vocab::value_index(int id) const {
  if (!is_value(id)) throw std::invalid_argument(fmt::format("token {} is not a value token", id));
  return static_cast<std::size_t>(id - value(0));
}

const std::string& Vocab::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw std::invalid_argument(fmt::format("unknown token id {}", id));
  }
  return names_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& token) const {
  auto it = std::find(names_.begin(), names_.end(), token);
  if (it == names_.end()) throw std::invalid_argument("unknown token '" + token + "'");
  return static_cast<int>(it - names_.begin());
}

std::vector<int> Vocab::tokenize(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::detokenize(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(name(i));
  return out;
}

std::vector<int> pad_to(std::vector<int> ids, std::size_t k) {
  ids.resize(k, Vocab::kPad);
  return ids;
}

// ---------------------------------------------------------------------------
// Config

void SynthConfig::validate() const {
  if (n_attributes == 0 || n_values == 0 || n_distractors == 0) {
    throw std::invalid_argument("synth: attribute, value and distractor counts must be positive");
  }
  if (k < 2 * n_attributes) {
    throw std::invalid_argument(fmt::format("synth: k={} cannot hold {} attribute slots of width >= 2", k, n_attributes));
  }
  if (image_channels == 0 || image_channels > 3) throw std::invalid_argument("synth: image_channels must be 1..3");
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument(fmt::format("synth: patch size {} does not divide image size {}", patch_size, image_size));
  }
  if (patch_size < 2) throw std::invalid_argument("synth: patch size must be >= 2 for texture codes");
  if (patch_count() > k) {
    throw std::invalid_argument(fmt::format("synth: {} patches exceed sequence length {}", patch_count(), k));
  }
  const std::size_t codes = (std::size_t{1} << image_channels) * 4;
  if (n_values > codes) {
    throw std::invalid_argument(fmt::format("synth: {} values exceed the {} image codes available", n_values, codes));
  }
  for (double p : {mix_context, mix_image, mix_both, source_affinity, distractor_pair_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synth: probabilities must lie in [0, 1]");
  }
  if (std::fabs(mix_context + mix_image + mix_both - 1.0) > 1e-9) {
    throw std::invalid_argument("synth: source mix proportions must sum to 1");
  }
  if (pixel_noise < 0.0) throw std::invalid_argument("synth: pixel_noise must be >= 0");
}

json SynthConfig::to_json() const {
  return json{{"n_attributes", n_attributes},
              {"n_values", n_values},
              {"n_distractors", n_distractors},
              {"k", k},
              {"image_channels", image_channels},
              {"image_size", image_size},
              {"patch_size", patch_size},
              {"mix_context", mix_context},
              {"mix_image", mix_image},
              {"mix_both", mix_both},
              {"source_affinity", source_affinity},
              {"distractor_pair_prob", distractor_pair_prob},
              {"pixel_noise", pixel_noise},
              {"n_train", n_train},
              {"n_val", n_val},
              {"n_test", n_test},
              {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_attributes") c.n_attributes = v.get<std::size_t>();
    else if (key == "n_values") c.n_values = v.get<std::size_t>();
    else if (key == "n_distractors") c.n_distractors = v.get<std::size_t>();
    else if (key == "k") c.k = v.get<std::size_t>();
    else if (key == "image_channels") c.image_channels = v.get<std::size_t>();
    else if (key == "image_size") c.image_size = v.get<std::size_t>();
    else if (key == "patch_size") c.patch_size = v.get<std::size_t>();
    else if (key == "mix_context") c.mix_context = v.get<double>();
    else if (key == "mix_image") c.mix_image = v.get<double>();
    else if (key == "mix_both") c.mix_both = v.get<double>();
    else if (key == "source_affinity") c.source_affinity = v.get<double>();
    else if (key == "distractor_pair_prob") c.distractor_pair_prob = v.get<double>();
    else if (key == "pixel_noise") c.pixel_noise = v.get<double>();
    else if (key == "n_train") c.n_train = v.get<std::size_t>();
    else if (key == "n_val") c.n_val = v.get<std::size_t>();
    else if (key == "n_test") c.n_test = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("synth: unknown config key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Generation

std::vector<SourceLabel> attribute_homes(const SynthConfig& cfg) {
  const double mix[3] = {cfg.mix_context, cfg.mix_image, cfg.mix_both};
  const SourceLabel labels[3] = {SourceLabel::kContext, SourceLabel::kImage, SourceLabel::kBoth};
  const double n = static_cast<double>(cfg.n_attributes);
  std::size_t counts[3];
  double rem[3];
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(mix[i] * n));
    rem[i] = mix[i] * n - static_cast<double>(counts[i]);
    used += counts[i];
  }
  while (used < cfg.n_attributes) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++used;
  }
  std::vector<SourceLabel> homes;
  for (int i = 0; i < 3; ++i) homes.insert(homes.end(), counts[i], labels[i]);
  return homes;
}

ImageGrid render_value_image(const SynthConfig& cfg, std::size_t value, Rng& rng) {
  ImageGrid img;
  img.channels = cfg.image_channels;
  img.height = img.width = cfg.image_size;
  img.patch_size = cfg.patch_size;
  img.pixels.resize(img.channels * img.height * img.width);
  const std::size_t colors = std::size_t{1} << cfg.image_channels;
  const std::size_t color = value % colors;
  const std::size_t texture = value / colors;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double base = (color >> c) & 1 ? 0.75 : 0.25;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        double sign = 0.0;
        if (texture == 1) sign = y % 2 ? -1.0 : 1.0;
        if (texture == 2) sign = x % 2 ? -1.0 : 1.0;
        if (texture == 3) sign = (x + y) % 2 ? -1.0 : 1.0;
        const double v = base + 0.15 * sign + rng.normal(0.0, cfg.pixel_noise);
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  }
  return img;
}

std::size_t decode_image_value(const SynthConfig& cfg, const ImageGrid& img) {
  const std::size_t colors = std::size_t{1} << cfg.image_channels;
  std::size_t color = 0;
  double contrast[4] = {0.0, 0.0, 0.0, 0.0};
  const double count = static_cast<double>(img.height * img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    double mean = 0.0;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double v = img.at(c, y, x);
        mean += v;
        contrast[1] += (y % 2 ? -v : v);
        contrast[2] += (x % 2 ? -v : v);
        contrast[3] += ((x + y) % 2 ? -v : v);
      }
    if (mean / count > 0.5) color |= std::size_t{1} << c;
  }
  std::size_t texture = 0;
  double best = 0.075 * count * static_cast<double>(img.channels);
  for (std::size_t t = 1; t < 4; ++t) {
    if (contrast[t] > best) {
      best = contrast[t];
      texture = t;
    }
  }
  return texture * colors + color;
}

Sample generate_sample(const SynthConfig& cfg, std::uint64_t id) {
  const Vocab vocab = cfg.vocab();
  const auto homes = attribute_homes(cfg);
  Rng rng(derive_seed(cfg.seed, id));

  Sample s;
  s.id = id;
  s.attribute = rng.below(cfg.n_attributes);
  if (rng.uniform() < cfg.source_affinity) {
    s.label = homes[s.attribute];
  } else {
    const double u = rng.uniform();
    s.label = u < cfg.mix_context ? SourceLabel::kContext
              : u < cfg.mix_context + cfg.mix_image ? SourceLabel::kImage
                                                     : SourceLabel::kBoth;
  }
  const std::size_t answer = rng.below(cfg.n_values);

  s.context.resize(cfg.k);
  for (int& t : s.context) t = vocab.distractor(rng.below(cfg.n_distractors));
  const std::size_t slot = cfg.slot_size();
  for (std::size_t b = 0; b < cfg.n_attributes; ++b) {
    const bool queried = b == s.attribute;
    const double u = rng.uniform();
    const bool present = queried ? has_context(s.label) : u < cfg.distractor_pair_prob;
    std::size_t value = rng.below(cfg.n_values);
    if (queried) {
      value = answer;
    } else if (!has_context(s.label) && cfg.n_values > 1 && value == answer) {
      value = (answer + 1 + rng.below(cfg.n_values - 1)) % cfg.n_values;
    }
    const std::size_t offset = rng.below(slot - 1);
    if (present) {
      s.context[b * slot + offset] = vocab.attribute(b);
      s.context[b * slot + offset + 1] = vocab.value(value);
    }
  }
  // Single-value vocabularies cannot keep image-only answers out of distractor pairs.
  if (!has_context(s.label) && cfg.n_values == 1) {
    for (int& t : s.context)
      if (vocab.is_value(t)) t = vocab.distractor(0);
  }

  s.question = pad_to({vocab.attribute(s.attribute)}, cfg.k);
  const std::size_t shown = has_image(s.label) ? answer : rng.below(cfg.n_values);
  s.image = render_value_image(cfg, shown, rng);
  s.answer = {vocab.value(answer)};
  return s;
}

Dataset generate_range(const SynthConfig& cfg, std::uint64_t first_id, std::size_t count) {
  cfg.validate();
  Dataset ds{cfg, {}};
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(generate_sample(cfg, first_id + i));
  return ds;
}

DatasetSplits generate_dataset(const SynthConfig& cfg) {
  return DatasetSplits{generate_range(cfg, 0, cfg.n_train), generate_range(cfg, cfg.n_train, cfg.n_val),
                       generate_range(cfg, cfg.n_train + cfg.n_val, cfg.n_test)};
}

std::optional<std::vector<int>> recover_answer(const SynthConfig& cfg, const Sample& s, SourceLabel from) {
  const Vocab vocab = cfg.vocab();
  if (from == SourceLabel::kContext) {
    const int attr = vocab.attribute(s.attribute);
    for (std::size_t i = 0; i + 1 < s.context.size(); ++i) {
      if (s.context[i] == attr && vocab.is_value(s.context[i + 1])) return std::vector<int>{s.context[i + 1]};
    }
    return std::nullopt;
  }
  if (from == SourceLabel::kImage) {
    if (!has_image(s.label)) return std::nullopt;
    const std::size_t v = decode_image_value(cfg, s.image);
    if (v >= cfg.n_values) return std::nullopt;
    return std::vector<int>{vocab.value(v)};
  }
  auto c = recover_answer(cfg, s, SourceLabel::kContext);
  auto i = recover_answer(cfg, s, SourceLabel::kImage);
  if (c && i && *c == *i) return c;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json sample_to_json(const Sample& s) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(s.image.pixels.size() * 8);
  for (double v : s.image.pixels) append_f64_le(bytes, v);
  return json{{"id", s.id},
              {"question_ids", s.question},
              {"context_ids", s.context},
              {"image", base64_encode(bytes)},
              {"answer_ids", s.answer},
              {"source_label", to_string(s.label)},
              {"attribute_id", s.attribute}};
}

std::vector<int> checked_ids(const json& j, const char* field, std::size_t vocab_size) {
  auto ids = j.at(field).get<std::vector<int>>();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw std::invalid_argument(fmt::format("{} contains out-of-vocabulary id {}", field, id));
    }
  }
  return ids;
}

Sample sample_from_json(const json& j, const SynthConfig& cfg, std::size_t vocab_size) {
  Sample s;
  s.id = j.at("id").get<std::uint64_t>();
  s.question = checked_ids(j, "question_ids", vocab_size);
  s.context = checked_ids(j, "context_ids", vocab_size);
  s.answer = checked_ids(j, "answer_ids", vocab_size);
  if (s.question.size() != cfg.k || s.context.size() != cfg.k) {
    throw std::invalid_argument(fmt::format("question/context must have {} ids", cfg.k));
  }
  if (s.answer.empty()) throw std::invalid_argument("answer_ids is empty");
  s.label = parse_source_label(j.at("source_label").get<std::string>());
  s.attribute = j.at("attribute_id").get<std::size_t>();
  if (s.attribute >= cfg.n_attributes) throw std::invalid_argument("attribute_id out of range");
  s.image.channels = cfg.image_channels;
  s.image.height = s.image.width = cfg.image_size;
  s.image.patch_size = cfg.patch_size;
  const auto bytes = base64_decode(j.at("image").get<std::string>());
  const std::size_t n = cfg.image_channels * cfg.image_size * cfg.image_size;
  if (bytes.size() != n * 8) {
    throw std::invalid_argument(fmt::format("image holds {} bytes, expected {}", bytes.size(), n * 8));
  }
  s.image.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.image.pixels[i] = read_f64_le(bytes.data() + 8 * i);
  return s;
}

}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  std::string out = json{{"format", kDatasetFormat}, {"config", ds.config.to_json()}, {"count", ds.samples.size()}}.dump();
  out += '\n';
  for (const auto& s : ds.samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset: empty file, missing header");
  Dataset ds;
  std::size_t count = 0;
  try {
    const json header = json::parse(line);
    const auto format = header.at("format").get<std::string>();
    if (format != kDatasetFormat) {
      throw std::invalid_argument(fmt::format("format '{}' is not '{}'", format, kDatasetFormat));
    }
    ds.config = SynthConfig::from_json(header.at("config"));
    ds.config.validate();
    count = header.at("count").get<std::size_t>();
  } catch (const std::exception& e) {
    throw std::invalid_argument(fmt::format("dataset header: {}", e.what()));
  }
  const std::size_t vocab_size = ds.config.vocab().size();
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line) || line.empty()) {
      throw std::invalid_argument(fmt::format("dataset record {}: missing (file truncated, header promises {})", i, count));
    }
    try {
      ds.samples.push_back(sample_from_json(json::parse(line), ds.config, vocab_size));
    } catch (const std::exception& e) {
      throw std::invalid_argument(fmt::format("dataset record {}: {}", i, e.what()));
    }
  }
  while (std::getline(in, line)) {
    if (!line.empty()) throw std::invalid_argument(fmt::format("dataset record {}: beyond declared count", count));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  const std::string text = serialize_dataset(ds);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset load_dataset(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_dataset(std::string(bytes.begin(), bytes.end()));
}

std::uint64_t dataset_checksum(const Dataset& ds) { return fnv1a64(serialize_dataset(ds)); }

}  // namespace moemoe
