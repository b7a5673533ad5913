#pragma once

#include "splatshard/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace splatshard {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout documented in the README.
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
/// Throws VersionError for a foreign version and ParseError for a malformed body.
TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace splatshard
