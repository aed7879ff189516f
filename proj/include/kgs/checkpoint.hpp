#pragma once

#include "kgs/trainer.hpp"

#include <filesystem>

namespace kgs {

inline constexpr char kCheckpointMagic[4] = {'K', 'G', 'S', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  TrainState state;
};

/// Versioned little-endian binary snapshot of the full training state.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& cfg);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kgs
