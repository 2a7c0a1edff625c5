#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "groundrl/pipeline.hpp"
#include "groundrl/reward.hpp"
#include "groundrl/simulator.hpp"

namespace groundrl {

struct ServiceConfig {
  std::size_t max_batch = 1024;
  std::size_t max_body_bytes = 64u << 20;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

/// Everything a config file can set. Missing keys keep their defaults.
struct AppConfig {
  RewardConfig reward;
  ServiceConfig service;
  CleanConfig clean;
  DistillConfig distill;
  std::size_t mock_teachers = 2;  // teachers in the built-in mock client set
  WorldConfig world;
  SimulationConfig simulate;  // its `reward` member is replaced by `reward` above

  void validate() const;
};

/// Parses a config document. Unknown keys and wrong types raise ConfigError
/// naming the offending path, e.g. `reward.schedule.start.acc`. A lexicon
/// path is resolved against `base_dir`.
AppConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

/// Every scoring-relevant setting, lexicon phrases included, with sorted keys.
nlohmann::json reward_config_json(const RewardConfig& cfg);

/// FNV-1a 64 of the canonical reward config, as 16 lowercase hex digits.
std::string config_hash(const RewardConfig& cfg);

std::string canonical_dump(const nlohmann::json& j);

nlohmann::json weights_json(const RewardWeights& w);

}  // namespace groundrl
