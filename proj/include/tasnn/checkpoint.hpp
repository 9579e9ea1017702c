#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "tasnn/trainer.hpp"

namespace tasnn::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

// Little-endian container: magic, version, metadata JSON, model and training
// config, every parameter with its shape, Adam moments, class centers, the
// sampler RNG state, epoch counter and loss history. Saving a loaded
// checkpoint reproduces the file byte for byte.
std::string serialize(const train::Trainer& trainer, const nlohmann::ordered_json& meta);
train::Trainer deserialize(const std::string& bytes, nlohmann::ordered_json* meta = nullptr);

void save(const std::filesystem::path& path, const train::Trainer& trainer, const nlohmann::ordered_json& meta);
// Throws DataError on a missing, truncated or incompatible file.
train::Trainer load(const std::filesystem::path& path, nlohmann::ordered_json* meta = nullptr);

}  // namespace tasnn::ckpt
