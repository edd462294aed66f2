#pragma once

#include "polymotion/params.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace polymotion {

/// On-disk archive: `manifest.json` (names, shapes, byte offsets, dtype,
/// stage, config hash, RNG state, free-form meta) plus `weights.bin` holding
/// every array as contiguous little-endian float32 in sorted-name order.
struct Checkpoint {
    std::string stage;
    std::string config_hash;
    std::string rng_state;
    nlohmann::json meta = nlohmann::json::object();
    ParamSet<float> arrays;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Hex SHA-256 over the names, shapes and raw bytes of every array whose
/// name starts with `prefix`.
std::string params_sha256(const ParamSet<float>& params, const std::string& prefix = "");
std::string sha256_hex(const std::string& bytes);

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& s);

}  // namespace polymotion
