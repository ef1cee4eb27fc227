// SPDX-License-Identifier: Apache-2.0
//
// Single-file checkpoint: 8-byte magic, u32 format version, u64 manifest
// length, a JSON manifest (names, shapes, dtype, byte offsets, config hash),
// then raw little-endian float64 arrays.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "entsft/config.hpp"
#include "entsft/param_set.hpp"

namespace entsft {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::size_t step = 0;
    std::uint64_t config_hash = 0;
    Json config;
    ParamSet student;
    std::optional<ParamSet> teacher;
    std::size_t teacher_steps_since_sync = 0;
    std::optional<ParamSet> base;  // frozen reference for the KL baseline
    ParamSet adam_m;
    ParamSet adam_v;
    std::size_t adam_steps = 0;
};

/// Writes atomically (temporary file + rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace entsft
