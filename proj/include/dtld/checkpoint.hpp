#pragma once

#include "dtld/decoder.hpp"

#include <filesystem>
#include <string>

namespace dtld {

/// Binary container: magic "DTLDCKPT", format version, the model section of
/// the config, the run config hash, then for every parameter path its
/// logical shape and row-major float64 values (little-endian).
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::string config_hash;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& config_hash);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// In-memory forms of the same encoding.
[[nodiscard]] std::string encode_checkpoint(const Model& model, const std::string& config_hash);
[[nodiscard]] Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace dtld
