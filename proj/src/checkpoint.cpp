// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/checkpoint.hpp"

#include <cstring>

#include <fmt/format.h>

#include "moemoe/bytes.hpp"

namespace moemoe {

namespace {

using nlohmann::json;

constexpr std::size_t kMagicLen = 8;

void append_array(std::vector<std::uint8_t>& blob, json& manifest, const std::string& name, const Shape& shape,
                  std::span<const double> values, const char* kind, bool trainable) {
  manifest.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}, {"kind", kind}, {"trainable", trainable}});
  for (double v : values) append_f64_le(blob, v);
}

/// Validates framing and checksum; returns the parsed header and the data blob bounds.
json parse_frame(const std::vector<std::uint8_t>& bytes, std::size_t& data_begin, std::size_t& data_end) {
  if (bytes.size() < kMagicLen + 16) throw CheckpointError("checkpoint: file too short");
  const std::string magic(bytes.begin(), bytes.begin() + kMagicLen);
  if (magic.rfind("MOEMOE", 0) != 0) throw CheckpointError("checkpoint: bad magic, not a checkpoint file");
  if (magic != kCheckpointMagic) {
    throw CheckpointError(fmt::format("checkpoint: version {} is not supported (this build reads {})", magic, kCheckpointMagic));
  }
  const std::size_t body = bytes.size() - 8;
  const std::uint64_t stored = read_u64_le(bytes.data() + body);
  const std::uint64_t actual = fnv1a64(std::span(bytes.data(), body));
  if (stored != actual) {
    throw CheckpointError(fmt::format("checkpoint: checksum mismatch (stored {:016x}, computed {:016x})", stored, actual));
  }
  const std::uint64_t header_len = read_u64_le(bytes.data() + kMagicLen);
  if (kMagicLen + 8 + header_len > body) throw CheckpointError("checkpoint: header length exceeds file size");
  const char* h = reinterpret_cast<const char*>(bytes.data() + kMagicLen + 8);
  json header;
  try {
    header = json::parse(h, h + header_len);
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("checkpoint: malformed header: {}", e.what()));
  }
  if (header.value("version", std::string()) != kCheckpointMagic) {
    throw CheckpointError(fmt::format("checkpoint: header version {} does not match file version {}",
                                      header.value("version", std::string("<missing>")), kCheckpointMagic));
  }
  data_begin = kMagicLen + 8 + header_len;
  data_end = body;
  return header;
}

void read_array(const std::vector<std::uint8_t>& bytes, std::size_t data_begin, std::size_t data_end, const json& entry,
                std::span<double> out) {
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t begin = data_begin + offset;
  if (offset > data_end - data_begin || out.size() * 8 > data_end - begin) {
    throw CheckpointError(fmt::format("checkpoint: tensor '{}' runs past the data section", entry.at("name").get<std::string>()));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_f64_le(bytes.data() + begin + 8 * i);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const RunConfig& run, const SynthConfig& data, const Model& model,
                                            const TrainState& state) {
  RunConfig snapshot = run;
  snapshot.model = model.config();
  std::vector<std::uint8_t> blob;
  json manifest = json::array();
  for (const auto& p : model.params().all()) {
    append_array(blob, manifest, p.name, p.tensor.shape(), p.tensor.data(), "param", p.trainable);
  }
  for (const auto& [name, mv] : state.optimizer.moments()) {
    const Shape shape{mv.m.size()};
    append_array(blob, manifest, name, shape, mv.m, "adam_m", true);
    append_array(blob, manifest, name, shape, mv.v, "adam_v", true);
  }
  json header;
  header["version"] = kCheckpointMagic;
  header["run_config"] = snapshot.to_json();
  header["synth_config"] = data.to_json();
  header["epoch"] = state.epoch;
  header["step_count"] = state.optimizer.step_count();
  header["rng_state"] = state.rng.state();
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
  append_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  append_u64_le(out, fnv1a64(out));
  return out;
}

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t data_begin = 0, data_end = 0;
  const json header = parse_frame(bytes, data_begin, data_end);
  LoadedCheckpoint ck;
  try {
    ck.run = RunConfig::from_json(header.at("run_config"));
    ck.data = SynthConfig::from_json(header.at("synth_config"));
  } catch (const std::exception& e) {
    throw CheckpointError(fmt::format("checkpoint: bad config snapshot: {}", e.what()));
  }
  ck.model = std::make_unique<Model>(ck.run.model);
  ck.state = make_train_state(ck.run);
  ck.state.epoch = header.at("epoch").get<int>();
  ck.state.optimizer.set_step_count(header.at("step_count").get<std::size_t>());
  ck.state.rng.set_state(header.at("rng_state").get<std::string>());

  std::size_t params_seen = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    if (kind == "param") {
      if (!ck.model->params().contains(name)) {
        throw CheckpointError(fmt::format("checkpoint: tensor '{}' has no counterpart in the rebuilt model", name));
      }
      Parameter& p = ck.model->params().get(name);
      if (p.tensor.shape() != shape) {
        throw CheckpointError(fmt::format("checkpoint: tensor '{}' has shape {} but the model expects {}", name,
                                          shape_str(shape), shape_str(p.tensor.shape())));
      }
      read_array(bytes, data_begin, data_end, entry, p.tensor.mutable_data());
      p.trainable = entry.at("trainable").get<bool>();
      p.tensor.set_requires_grad(p.trainable);
      ++params_seen;
    } else if (kind == "adam_m" || kind == "adam_v") {
      MomentPair& mv = ck.state.optimizer.moments()[name];
      std::vector<double>& dst = kind == "adam_m" ? mv.m : mv.v;
      dst.assign(shape_numel(shape), 0.0);
      read_array(bytes, data_begin, data_end, entry, dst);
    } else {
      throw CheckpointError(fmt::format("checkpoint: tensor '{}' has unknown kind '{}'", name, kind));
    }
  }
  if (params_seen != ck.model->params().size()) {
    throw CheckpointError(fmt::format("checkpoint: holds {} parameters but the model has {}", params_seen,
                                      ck.model->params().size()));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const RunConfig& run, const SynthConfig& data, const Model& model,
                     const TrainState& state) {
  write_file_bytes(path, encode_checkpoint(run, data, model, state));
}

LoadedCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

nlohmann::json read_checkpoint_header(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t b = 0, e = 0;
  return parse_frame(bytes, b, e);
}

}  // namespace moemoe
