#include "fcil/fed.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <set>

#include "fcil/errors.hpp"
#include "fcil/model_io.hpp"

namespace fcil::fed {

namespace {

constexpr std::uint64_t kSampleStream = 0x53414d50;  // "SAMP"
constexpr std::uint64_t kLocalStream = 0x4c4f4341;   // "LOCA"
constexpr std::uint64_t kReplayStream = 0x5245504c;  // "REPL"

}  // namespace

TrainMode parse_train_mode(std::string_view name) {
  if (name == "plain") {
    return TrainMode::kPlain;
  }
  if (name == "clear") {
    return TrainMode::kClear;
  }
  throw ConfigError("unknown training mode '" + std::string(name) + "' (plain|clear)");
}

std::string_view to_string(TrainMode mode) { return mode == TrainMode::kPlain ? "plain" : "clear"; }

void FedConfig::validate() const {
  if (clients == 0) {
    throw ConfigError("federation needs at least one client");
  }
  if (!(participation > 0.0) || participation > 1.0) {
    throw ConfigError("participation fraction must lie in (0, 1]");
  }
  if (batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
  if (epochs.has_value() == local_iterations.has_value()) {
    throw ConfigError("set exactly one of epochs / local_iterations");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
}

std::size_t FedConfig::clients_per_round() const {
  const auto m = static_cast<std::size_t>(std::floor(participation * static_cast<double>(clients)));
  return std::clamp<std::size_t>(m, 1, clients);
}

std::vector<ClientId> sample_clients(std::size_t clients, double participation, Rng& rng) {
  FedConfig cfg;
  cfg.clients = clients;
  cfg.participation = participation;
  const auto m = cfg.clients_per_round();
  // Partial Fisher-Yates over the id range.
  std::vector<ClientId> ids(clients);
  std::iota(ids.begin(), ids.end(), ClientId{0});
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<ClientId> round_selection(const FedConfig& cfg, std::uint32_t round) {
  Rng rng(derive_seed(cfg.seed, {kSampleStream, round}));
  return sample_clients(cfg.clients, cfg.participation, rng);
}

std::size_t TaskPlan::task_of(std::uint32_t round) const {
  if (rounds_per_task == 0 || task_classes.empty()) {
    return 0;
  }
  return std::min<std::size_t>(round / rounds_per_task, task_classes.size() - 1);
}

std::optional<std::span<const nn::ClassIndex>> TaskPlan::active_classes(std::uint32_t round) const {
  if (empty()) {
    return std::nullopt;
  }
  const auto& classes = task_classes[task_of(round)];
  return std::span<const nn::ClassIndex>(classes);
}

ClientUpdate local_update(const nn::MlpModel& global, ClientState& client, const FedConfig& cfg,
                          const LocalTraining& training, std::uint32_t round,
                          const TaskPlan& plan) {
  cfg.validate();
  if (client.shard.width() != global.input_dim()) {
    throw DimensionError("client " + std::to_string(client.client_id) + " shard width " +
                         std::to_string(client.shard.width()) + " does not match model input " +
                         std::to_string(global.input_dim()));
  }
  client.model = global;
  ClientUpdate update;
  update.client_id = client.client_id;
  update.round = round;

  std::vector<std::size_t> active;
  const auto classes = plan.active_classes(round);
  for (std::size_t i = 0; i < client.shard.size(); ++i) {
    if (!classes ||
        std::find(classes->begin(), classes->end(), client.shard.records[i].label) != classes->end()) {
      active.push_back(i);
    }
  }
  update.sample_count = active.size();
  const auto n = active.size();
  const std::size_t steps_per_pass = n == 0 ? 0 : (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps =
      n == 0 ? 0 : (cfg.local_iterations ? *cfg.local_iterations : *cfg.epochs * steps_per_pass);
  if (total_steps == 0) {
    update.weights = client.model;
    return update;
  }

  Rng rng(derive_seed(cfg.seed, {kLocalStream, round, client.client_id}));
  // replay sampling and reservoir draws
  Rng replay_rng(derive_seed(cfg.seed, {kReplayStream, round, client.client_id}));
  const auto batch = std::min(cfg.batch_size, n);
  update.batch_clipped = cfg.batch_size > n;
  const bool full_batch = batch == n;

  std::vector<std::size_t> order = active;
  std::size_t cursor = n;  // forces a shuffle before the first batch
  std::vector<std::size_t> rows;
  for (std::size_t step = 0; step < total_steps; ++step) {
    rows.clear();
    if (full_batch) {
      rows = active;
    } else if (cfg.local_iterations) {
      if (cursor + batch > n) {
        rng.shuffle(order);
        cursor = 0;
      }
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                  order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
      cursor += batch;
    } else {
      // epoch mode walks every sample once per pass, last batch may be short
      if (cursor >= n) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto take = std::min(batch, n - cursor);
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                  order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      cursor += take;
    }
    const auto mini = client.shard.to_batch(rows);
    const auto stats = training.mode == TrainMode::kClear
                           ? clear::clear_train_step(client.model, mini, client.buffer,
                                                     training.clear, cfg.learning_rate, replay_rng)
                           : clear::supervised_step(client.model, mini, cfg.learning_rate);
    update.loss_trace.push_back(stats.loss.total);
  }
  update.weights = client.model;
  return update;
}

nn::MlpModel aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) {
    throw AggregationError("aggregate needs at least one client update");
  }
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) {
    sorted.push_back(&u);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

  const auto& ref = sorted.front()->weights;
  double total = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& u = *sorted[i];
    if (i > 0 && u.client_id == sorted[i - 1]->client_id) {
      throw AggregationError("duplicate update from client " + std::to_string(u.client_id));
    }
    if (u.sample_count == 0) {
      throw AggregationError("client " + std::to_string(u.client_id) + " reported n_k = 0");
    }
    const auto& w = u.weights;
    bool congruent = w.layer_dims == ref.layer_dims && w.weights.size() == ref.weights.size() &&
                     w.biases.size() == ref.biases.size() &&
                     w.value_head.has_value() == ref.value_head.has_value();
    for (std::size_t l = 0; congruent && l < w.weights.size(); ++l) {
      congruent = w.weights[l].rows() == ref.weights[l].rows() &&
                  w.weights[l].cols() == ref.weights[l].cols() &&
                  w.biases[l].size() == ref.biases[l].size();
    }
    if (!congruent) {
      throw AggregationError("update from client " + std::to_string(u.client_id) +
                             " is not shape-congruent with the global model");
    }
    total += static_cast<double>(u.sample_count);
  }

  // Sum in client-id order so the result does not depend on argument order; the
  // per-parameter clamp keeps it inside the client envelope despite rounding.
  const auto combine = [&](auto&& get) {
    using T = std::decay_t<decltype(get(ref))>;
    T acc = get(ref) * 0.0;
    T lo = get(ref);
    T hi = get(ref);
    for (const auto* u : sorted) {
      const auto& x = get(u->weights);
      acc += static_cast<double>(u->sample_count) * x;
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
    }
    T mean = acc / total;
    return T(mean.cwiseMax(lo).cwiseMin(hi));
  };

  nn::MlpModel out = ref;
  for (std::size_t l = 0; l < ref.weights.size(); ++l) {
    out.weights[l] = combine([l](const nn::MlpModel& m) -> const nn::Matrix& { return m.weights[l]; });
    out.biases[l] = combine([l](const nn::MlpModel& m) -> const nn::Vector& { return m.biases[l]; });
  }
  if (ref.value_head) {
    out.value_head->weights =
        combine([](const nn::MlpModel& m) -> const nn::RowVector& { return m.value_head->weights; });
    double acc = 0.0;
    double lo = ref.value_head->bias;
    double hi = lo;
    for (const auto* u : sorted) {
      const double b = u->weights.value_head->bias;
      acc += static_cast<double>(u->sample_count) * b;
      lo = std::min(lo, b);
      hi = std::max(hi, b);
    }
    out.value_head->bias = std::clamp(acc / total, lo, hi);
  }
  return out;
}

ClientRuntime::ClientRuntime(ClientId id, flow::Dataset shard, FedConfig cfg,
                             LocalTraining training, TaskPlan plan)
    : cfg_(cfg), training_(training), plan_(std::move(plan)) {
  cfg_.validate();
  if (training_.mode == TrainMode::kClear) {
    training_.clear.validate();
  }
  state_.client_id = id;
  state_.shard = std::move(shard);
  state_.buffer = clear::ReplayBuffer(training_.clear.buffer_capacity);
}

ClientUpdate ClientRuntime::train(std::uint32_t round, const nn::MlpModel& global) {
  auto update = local_update(global, state_, cfg_, training_, round, plan_);
  if (cfg_.f32_boundary) {
    update.weights = nn::round_to_f32(update.weights);
  }
  return update;
}

SimulatedClients::SimulatedClients(std::vector<flow::Dataset> shards, const FedConfig& cfg,
                                   const LocalTraining& training, const TaskPlan& plan,
                                   bool parallel)
    : parallel_(parallel) {
  if (shards.size() != cfg.clients) {
    throw ConfigError("got " + std::to_string(shards.size()) + " shards for " +
                      std::to_string(cfg.clients) + " clients");
  }
  clients_.reserve(shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    clients_.emplace_back(k, std::move(shards[k]), cfg, training, plan);
  }
}

RoundOutcome SimulatedClients::run_round(std::uint32_t round, const nn::MlpModel& global,
                                         std::span<const ClientId> selected) {
  for (const auto id : selected) {
    if (id >= clients_.size()) {
      throw IndexError("selected client " + std::to_string(id) + " does not exist");
    }
  }
  RoundOutcome outcome;
  if (parallel_ && selected.size() > 1) {
    std::vector<std::future<ClientUpdate>> pending;
    pending.reserve(selected.size());
    for (const auto id : selected) {
      pending.push_back(std::async(std::launch::async, [this, id, round, &global] {
        return clients_[id].train(round, global);
      }));
    }
    for (auto& f : pending) {
      outcome.updates.push_back(f.get());
    }
  } else {
    for (const auto id : selected) {
      outcome.updates.push_back(clients_[id].train(round, global));
    }
  }
  return outcome;
}

FederationResult run_federation(const FedConfig& cfg, RoundExecutor& executor,
                                nn::MlpModel model_init, std::uint32_t first_round,
                                const RoundHook& hook) {
  cfg.validate();
  model_init.validate();
  FederationResult result{std::move(model_init), {}};
  for (std::uint32_t r = first_round; r < first_round + cfg.rounds; ++r) {
    RoundRecord record;
    record.round = r;
    record.selected = round_selection(cfg, r);
    const nn::MlpModel broadcast = cfg.f32_boundary ? nn::round_to_f32(result.model) : result.model;
    auto outcome = executor.run_round(r, broadcast, record.selected);
    record.dropped = std::move(outcome.dropped);

    std::vector<ClientUpdate> contributors;
    double loss_sum = 0.0;
    double loss_weight = 0.0;
    for (auto& u : outcome.updates) {
      if (u.sample_count == 0) {
        record.idle.push_back(u.client_id);
        continue;
      }
      if (!u.loss_trace.empty()) {
        const double mean = std::accumulate(u.loss_trace.begin(), u.loss_trace.end(), 0.0) /
                            static_cast<double>(u.loss_trace.size());
        loss_sum += static_cast<double>(u.sample_count) * mean;
        loss_weight += static_cast<double>(u.sample_count);
      }
      record.samples += u.sample_count;
      contributors.push_back(std::move(u));
    }
    if (loss_weight > 0.0) {
      record.aggregate_loss = loss_sum / loss_weight;
    }
    if (!contributors.empty()) {
      result.model = aggregate(contributors);
    }
    if (hook) {
      record.metrics = hook(r, result.model);
    }
    result.history.push_back(std::move(record));
  }
  return result;
}

FederationResult run_federation(const FedConfig& cfg, std::vector<flow::Dataset> shards,
                                nn::MlpModel model_init, const LocalTraining& training,
                                const RoundHook& hook) {
  SimulatedClients clients(std::move(shards), cfg, training);
  return run_federation(cfg, clients, std::move(model_init), 0, hook);
}

}  // namespace fcil::fed
