#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcil/clear.hpp"
#include "fcil/dataset.hpp"
#include "fcil/nn.hpp"
#include "fcil/replay.hpp"
#include "fcil/rng.hpp"

namespace fcil::fed {

using ClientId = std::uint64_t;

enum class TrainMode { kPlain, kClear };

TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(TrainMode mode);

/// Federation hyperparameters. Exactly one of `epochs` / `local_iterations` is set.
struct FedConfig {
  std::size_t clients = 10;
  double participation = 1.0;
  std::size_t batch_size = 64;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> local_iterations = 300;
  double learning_rate = 0.01;
  std::size_t rounds = 10;
  RngSeed seed{};
  /// Round weights through f32 when they are broadcast and returned, as the wire does.
  bool f32_boundary = false;
  std::chrono::milliseconds round_timeout{30000};

  void validate() const;
  /// m = max(floor(C * K), 1).
  std::size_t clients_per_round() const;
};

/// Uniform m-subset of [0, K) without replacement, sorted ascending.
std::vector<ClientId> sample_clients(std::size_t clients, double participation, Rng& rng);

/// The subset the server draws for a given round (depends only on seed and round).
std::vector<ClientId> round_selection(const FedConfig& cfg, std::uint32_t round);

/// Maps global round numbers to the classes a client trains on. An empty plan trains on everything.
struct TaskPlan {
  std::size_t rounds_per_task = 0;
  std::vector<std::vector<nn::ClassIndex>> task_classes;

  bool empty() const { return task_classes.empty(); }
  std::size_t task_of(std::uint32_t round) const;
  /// nullopt means all classes.
  std::optional<std::span<const nn::ClassIndex>> active_classes(std::uint32_t round) const;
};

struct ClientState {
  ClientId client_id = 0;
  flow::Dataset shard;
  clear::ReplayBuffer buffer;
  nn::MlpModel model;
};

struct ClientUpdate {
  ClientId client_id = 0;
  nn::MlpModel weights;
  /// n_k: samples the client trained on this round (0 means it had nothing to train on).
  std::uint64_t sample_count = 0;
  std::uint32_t round = 0;
  std::vector<double> loss_trace;
  /// B exceeded the active shard and was clipped to it.
  bool batch_clipped = false;
};

struct LocalTraining {
  TrainMode mode = TrainMode::kPlain;
  clear::ClearConfig clear;
};

/// Client side of one round: start from the global weights, run E epochs (or
/// local_iterations steps) of B-sized mini-batches over the active part of the shard.
ClientUpdate local_update(const nn::MlpModel& global, ClientState& client, const FedConfig& cfg,
                          const LocalTraining& training, std::uint32_t round,
                          const TaskPlan& plan = {});

/// n_k-weighted mean of the client parameters. Throws AggregationError naming the
/// offending client on shape mismatch, duplicate ids, or n_k == 0.
nn::MlpModel aggregate(std::span<const ClientUpdate> updates);

/// A client together with its fixed training configuration; used in-process and by networked clients.
class ClientRuntime {
 public:
  ClientRuntime(ClientId id, flow::Dataset shard, FedConfig cfg, LocalTraining training,
                TaskPlan plan = {});

  ClientUpdate train(std::uint32_t round, const nn::MlpModel& global);

  ClientId id() const { return state_.client_id; }
  const ClientState& state() const { return state_; }
  const FedConfig& config() const { return cfg_; }

 private:
  ClientState state_;
  FedConfig cfg_;
  LocalTraining training_;
  TaskPlan plan_;
};

struct RoundOutcome {
  std::vector<ClientUpdate> updates;
  std::vector<ClientId> dropped;
};

/// Delivers the global model to the selected clients and collects their updates.
class RoundExecutor {
 public:
  virtual ~RoundExecutor() = default;
  virtual RoundOutcome run_round(std::uint32_t round, const nn::MlpModel& global,
                                 std::span<const ClientId> selected) = 0;
};

/// In-process clients; selected clients train concurrently, one thread each.
class SimulatedClients final : public RoundExecutor {
 public:
  SimulatedClients(std::vector<flow::Dataset> shards, const FedConfig& cfg,
                   const LocalTraining& training, const TaskPlan& plan = {}, bool parallel = true);

  RoundOutcome run_round(std::uint32_t round, const nn::MlpModel& global,
                         std::span<const ClientId> selected) override;

  std::vector<ClientRuntime>& clients() { return clients_; }

 private:
  std::vector<ClientRuntime> clients_;
  bool parallel_;
};

struct RoundRecord {
  std::uint32_t round = 0;
  std::vector<ClientId> selected;
  std::vector<ClientId> dropped;
  /// Selected clients with nothing to train on in this round.
  std::vector<ClientId> idle;
  std::uint64_t samples = 0;
  std::optional<double> aggregate_loss;
  std::map<std::string, double> metrics;
};

using RoundHistory = std::vector<RoundRecord>;

/// Called after each aggregation; its result is stored in that round's record.
using RoundHook = std::function<std::map<std::string, double>(std::uint32_t, const nn::MlpModel&)>;

struct FederationResult {
  nn::MlpModel model;
  RoundHistory history;
};

/// cfg.rounds rounds of sample -> broadcast -> local update -> aggregate, numbered from first_round.
FederationResult run_federation(const FedConfig& cfg, RoundExecutor& executor,
                                nn::MlpModel model_init, std::uint32_t first_round = 0,
                                const RoundHook& hook = {});

/// Simulation over in-memory shards (one per client).
FederationResult run_federation(const FedConfig& cfg, std::vector<flow::Dataset> shards,
                                nn::MlpModel model_init, const LocalTraining& training,
                                const RoundHook& hook = {});

}  // namespace fcil::fed
