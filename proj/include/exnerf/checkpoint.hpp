// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "exnerf/training.hpp"
#include "json.hpp"

namespace exnerf {

inline constexpr char kCheckpointMagic[9] = "EXNF0001";

/// Layout: the 8 magic bytes, a little-endian u32 header length, a JSON
/// header (tensor names and shapes in payload order, iteration, Adam step,
/// optimizer flag, training config, rng keys), then little-endian float32
/// payloads. Optimizer moments are stored as `adam.m/<name>` and
/// `adam.v/<name>`. The file is written to a temporary and renamed.
void save_checkpoint(const TrainState &state, const std::filesystem::path &path, bool include_optimizer = true);

/// Parses and validates the whole file before building any state.
/// Throws UnsupportedFormat on a magic/version mismatch and IoError on
/// truncation.
TrainState load_checkpoint(const std::filesystem::path &path);

nlohmann::json read_checkpoint_header(const std::filesystem::path &path);

}  // namespace exnerf
