#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "kdiff/trainer.hpp"

namespace kdiff {

enum class StorageMode : std::uint8_t { Float64 = 0, Float32 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all little-endian):
///   "EV2K" | u32 version | header | u32 blob count |
///   { u32 name length, name, u32 rank, u64 dims..., values } ... | u32 CRC32
/// The header carries the schedule, expert count, model dimensions, knowledge
/// weights, storage mode, the remaining training settings and the step
/// counter. Values are f64 or f32 according to the storage mode.
/// The file is written to a temporary name and renamed into place, so a
/// failed write never clobbers an earlier checkpoint.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config,
                     StorageMode storage = StorageMode::Float64);

struct LoadedCheckpoint {
  TrainConfig config;
  TrainState state;
  StorageMode storage = StorageMode::Float64;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// CRC32 of the whole file, hex encoded; identifies a checkpoint in run metadata.
std::string checkpoint_hash(const std::filesystem::path& path);

}  // namespace kdiff
