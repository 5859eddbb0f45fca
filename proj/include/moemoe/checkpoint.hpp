// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "moemoe/config.hpp"
#include "moemoe/data.hpp"
#include "moemoe/model.hpp"
#include "moemoe/train.hpp"

namespace moemoe {

inline constexpr const char* kCheckpointMagic = "MOEMOE01";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedCheckpoint {
  RunConfig run;
  SynthConfig data;
  std::unique_ptr<Model> model;
  TrainState state;
};

/// Layout: magic[8] | u64 header length | JSON header | f64 LE arrays | u64 FNV-1a of everything before it.
/// The run config's model section is replaced by the model's own config so the structure can be rebuilt.
std::vector<std::uint8_t> encode_checkpoint(const RunConfig& run, const SynthConfig& data, const Model& model,
                                            const TrainState& state);
LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const RunConfig& run, const SynthConfig& data, const Model& model,
                     const TrainState& state);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Header JSON after integrity checks, without building the model.
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace moemoe
