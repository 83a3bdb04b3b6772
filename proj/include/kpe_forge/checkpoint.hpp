#pragma once

#include "kpe_forge/params.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kpeforge {

// Optimizer schedule and rng position needed to resume training.
struct TrainingState {
    int epoch{0};
    double lr{0.0};
    double bestLoss{0.0};
    int plateau{0};
    std::uint64_t adamStep{0};
    std::array<std::uint64_t, 4> rng{};

    friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

/// On-disk model snapshot. Layout (little-endian):
///   "KPEFCKPT" | u32 version | u64 config hash | str kind | str config
///   | training state | u32 tensor count | per tensor: str name, u32 rows, u32 cols
///   | f32 params | u8 has-moments [| f32 m | f32 v]
/// Strings are u32 length + bytes.
struct Checkpoint {
    std::string kind;  // "transformer" or "vq"
    std::string configText;
    std::uint64_t configHash{0};
    TrainingState state;
    ParamStore<float> params;
    std::vector<float> adamM;
    std::vector<float> adamV;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void saveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Rejects bad magic, unknown versions and truncation with FormatError. When
// `expectedHash` is given, a different stored hash is a ConfigError naming both.
Checkpoint loadCheckpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expectedHash = std::nullopt);

} // namespace kpeforge
