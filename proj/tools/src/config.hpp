#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcil/cil.hpp"
#include "fcil/clear.hpp"
#include "fcil/fed.hpp"

namespace fcil::app {

/// The published configuration schema (docs/config.schema.json), compiled in.
const nlohmann::json& config_schema();

/// Checks `doc` against the subset of JSON Schema the config schema uses
/// (type, enum, properties, additionalProperties, items, numeric bounds).
/// Throws ConfigError naming the offending path.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema);

struct DataConfig {
  std::optional<std::string> train;
  std::optional<std::string> test;
  std::optional<cil::SyntheticSpec> synthetic;
  std::string label_column = "label";
  std::vector<std::string> exclude_columns;
  std::vector<std::string> classes;
  std::string normalization = "minmax";
  double test_fraction = 0.2;
};

struct ScheduleConfig {
  std::string order = "random";
  std::vector<std::string> attacks;
  std::optional<std::uint64_t> seed;
};

struct TrainConfig {
  fed::TrainMode mode = fed::TrainMode::kClear;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  std::optional<std::size_t> iterations_per_task = 1000;
  std::optional<std::size_t> epochs_per_task;
};

struct FederatedConfig {
  std::size_t clients = 10;
  double participation = 1.0;
  std::size_t rounds_per_task = 10;
  std::optional<std::size_t> local_iterations = 300;
  std::optional<std::size_t> epochs;
  std::string partition = "iid";
  double dirichlet_alpha = 0.5;
  bool f32_boundary = false;
  std::int64_t round_timeout_ms = 30000;
  std::int64_t join_timeout_ms = 60000;
  std::string listen = "127.0.0.1:0";
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  DataConfig data;
  std::vector<std::size_t> hidden{300, 300, 300};
  ScheduleConfig schedule;
  TrainConfig train;
  clear::ClearConfig clear;
  FederatedConfig federated;

  /// Schema check, then field extraction, then semantic checks. Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  /// Throws IoError when unreadable, ConfigError when malformed.
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every key, defaults included; valid against the schema.
  nlohmann::json to_json() const;
  void validate() const;

  fed::FedConfig fed_config() const;
  fed::LocalTraining local_training() const;
  cil::CentralConfig central_config() const;
  cil::ScheduleOrder schedule_order() const;
};

/// Named child seeds of the root seed.
RngSeed stream_seed(std::uint64_t root, std::string_view stream);

}  // namespace fcil::app
