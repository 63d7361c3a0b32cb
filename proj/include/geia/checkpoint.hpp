#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace geia {

inline constexpr int kCheckpointVersion = 1;

// Shared on-disk layout for every trained model family:
//   header.json  {"format": "geia-checkpoint", "version", "family",
//                 "param_count", "weights_sha256", ...family fields}
//   weights.bin  flat little-endian float64 parameters
struct Checkpoint {
  nlohmann::json header;
  std::vector<double> weights;
};

void write_checkpoint(const std::filesystem::path& dir, const std::string& family,
                      nlohmann::json fields, std::span<const double> weights);
// Throws ConfigError on a missing/foreign/corrupt checkpoint or a family mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& dir, const std::string& family);
// Family tag of the checkpoint in `dir`.
std::string checkpoint_family(const std::filesystem::path& dir);

}  // namespace geia
