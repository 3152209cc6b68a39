#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "fcil/cil.hpp"
#include "fcil/dataset.hpp"
#include "fcil/fed.hpp"
#include "fcil/nn.hpp"

namespace fcil::app {

struct PreparedData {
  flow::Dataset train;
  flow::Dataset test;
  cil::TaskSchedule schedule;
  nn::MlpModel init;
};

/// Loads or generates data, splits, normalizes, builds the schedule and the initial model.
PreparedData prepare(const ExperimentConfig& cfg);

/// Client shards of the training split, one per client.
std::vector<flow::Dataset> make_shards(const ExperimentConfig& cfg, const flow::Dataset& train);

/// Everything a networked client needs besides its shard.
nlohmann::json client_manifest(const ExperimentConfig& cfg, const PreparedData& data,
                               const std::vector<flow::Dataset>& shards);

/// Writes shards/client_<k>.csv and shards/manifest.json under `dir`. Returns the manifest path.
std::filesystem::path write_shards(const std::filesystem::path& dir, const nlohmann::json& manifest,
                                   const std::vector<flow::Dataset>& shards);

struct ClientSetup {
  fed::ClientId id = 0;
  flow::Dataset shard;
  fed::FedConfig fed;
  fed::LocalTraining training;
  fed::TaskPlan plan;
};

/// Reads a manifest and one shard. Without `id` the client is found by shard file name.
ClientSetup load_client(const std::filesystem::path& manifest_path, const std::filesystem::path& shard_path,
                        std::optional<fed::ClientId> id);

void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace fcil::app
