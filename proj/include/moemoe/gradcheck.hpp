// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moemoe/config.hpp"
#include "moemoe/data.hpp"

namespace moemoe {

struct GradcheckOptions {
  std::size_t n_params = 50;
  double h = 1e-4;
  double tolerance = 1e-3;
  std::size_t batch_size = 2;
  std::uint64_t seed = 5;
  /// Test hook: when non-empty, the analytic gradient of this parameter is corrupted before comparison.
  std::string corrupt_parameter;
};

struct GradcheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  GradcheckEntry worst;
  bool passed = false;
  double tolerance = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Two-layer d=8, k=8 toy run with decoder-odd MoE and lambda 0.1.
RunConfig gradcheck_run_config();
/// Four attributes over a 16-token vocabulary with 3x8x8 images.
SynthConfig gradcheck_synth_config();

/// Compares autograd against central differences of the joint loss in eval mode (gate noise off).
/// Throws std::invalid_argument when d_model exceeds 16.
GradcheckReport run_gradcheck(const RunConfig& cfg, const SynthConfig& data, const GradcheckOptions& opt);

}  // namespace moemoe
