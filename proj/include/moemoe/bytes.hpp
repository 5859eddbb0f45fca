// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace moemoe {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

void append_f64_le(std::vector<std::uint8_t>& out, double v);
void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
double read_f64_le(const std::uint8_t* p);
std::uint64_t read_u64_le(const std::uint8_t* p);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace moemoe
