// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/micro_model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace evf {

// Checkpoint container, all integers little-endian:
//   8 bytes   magic "EVFCKPT\0"
//   u32       format version
//   u64       manifest length in bytes
//   manifest  UTF-8 JSON: {"format", "version", "stage", "config",
//             "tensors": [{"name", "group", "shape", "trainable", "offset", "count"}],
//             "payload_bytes"}
//   payload   every tensor as IEEE-754 binary64, in manifest order; offsets in bytes
//             from the start of the payload.
inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const MicroModel& model, const std::filesystem::path& path);
MicroModel load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::span<const unsigned char> bytes);

// SHA-256 over (name, shape, raw bytes) of the given parameters, in order.
std::string parameter_digest(std::span<const Parameter* const> params);
// Digest of every frozen parameter of the model.
std::string frozen_parameter_digest(const MicroModel& model);

}  // namespace evf
