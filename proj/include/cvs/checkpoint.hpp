#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "cvs/runner.hpp"

namespace cvs {

inline constexpr const char* kCheckpointFormat = "cvs-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// 16-digit lower-case hex form used for gallery block hashes.
std::string hash_hex(std::uint64_t hash);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

/// Model, replay buffer, replayed embeddings and gallery (with block hashes).
nlohmann::json checkpoint_json(const ExperimentState& state);

/// Rebuilds a state and re-verifies every gallery block against its stored
/// hash. Throws FormatError on a malformed or tampered container.
ExperimentState state_from_checkpoint(const nlohmann::json& j);

void write_checkpoint(const ExperimentState& state, const std::filesystem::path& path);
ExperimentState read_checkpoint(const std::filesystem::path& path);

}  // namespace cvs
