#pragma once

// Checkpoint directories: manifest.json plus one raw little-endian float32
// row-major file per named parameter.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drivex/attn_generator.hpp"
#include "drivex/mini_vlm.hpp"
#include "drivex/nn/layers.hpp"
#include "json.hpp"

namespace drivex::checkpoint {

struct ParamEntry {
  std::string name;
  long rows = 0;
  long cols = 0;
  std::string file;
};

struct Manifest {
  std::string model;  // "attention_generator" or "mini_vlm"
  nlohmann::json config;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  long step = 0;
  int epoch = 0;
  std::string config_hash;
  std::vector<ParamEntry> params;
};

/// FNV-1a over the compact dump of a JSON value, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

template <typename T>
void save(const std::filesystem::path& dir, const nn::ParamStore<T>& params, Manifest manifest);

Manifest read_manifest(const std::filesystem::path& dir);

/// Overwrites the values of `params` from `dir`. Names and shapes must match
/// exactly; throws std::runtime_error otherwise.
template <typename T>
Manifest load(const std::filesystem::path& dir, nn::ParamStore<T>& params);

nlohmann::json to_json(const generator::GeneratorConfig& c);
generator::GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const vlm::VlmConfig& c);
vlm::VlmConfig vlm_config_from_json(const nlohmann::json& j);

/// Rebuilds a model from its checkpoint.
generator::AttentionGenerator<float> load_generator(const std::filesystem::path& dir);
vlm::MiniVlm<float> load_vlm(const std::filesystem::path& dir);

}  // namespace drivex::checkpoint
