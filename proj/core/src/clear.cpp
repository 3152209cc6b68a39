#include "fcil/clear.hpp"

#include <cmath>
#include <string>

#include "fcil/errors.hpp"

namespace fcil::clear {

void ClearConfig::validate() const {
  if (!(replay_fraction >= 0.0) || !(replay_fraction < 1.0)) {
    throw ConfigError("replay_fraction must lie in [0, 1), got " + std::to_string(replay_fraction));
  }
  if (!(kl_weight >= 0.0) || !(value_weight >= 0.0) || !std::isfinite(kl_weight) ||
      !std::isfinite(value_weight)) {
    throw ConfigError("cloning weights must be finite and non-negative");
  }
  if (buffer_capacity == 0) {
    throw ConfigError("buffer capacity must be positive");
  }
  if (value_weight > 0.0 && !value_head) {
    throw ConfigError("value_weight > 0 requires value_head");
  }
}

std::size_t ClearConfig::replay_count(std::size_t new_rows) const {
  if (replay_fraction == 0.0) {
    return 0;
  }
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(new_rows) * replay_fraction / (1.0 - replay_fraction)));
}

StepStats supervised_step(nn::MlpModel& model, const nn::Batch& batch, double learning_rate) {
  if (batch.size() == 0) {
    throw InputError("training step needs a non-empty batch");
  }
  auto result = nn::backward(model, batch, nn::LossSpec{});
  nn::apply_sgd(model, result.gradients, learning_rate);
  StepStats stats;
  stats.loss = result.loss;
  stats.new_rows = batch.size();
  return stats;
}

StepStats clear_train_step(nn::MlpModel& model, const nn::Batch& new_batch, ReplayBuffer& buffer,
                           const ClearConfig& cfg, double learning_rate, Rng& rng) {
  cfg.validate();
  if (new_batch.size() == 0) {
    throw InputError("clear_train_step needs a non-empty batch");
  }
  if (!buffer.empty() && buffer.entries().front().features.size() != model.input_dim()) {
    throw DimensionError("replay buffer width does not match the model input");
  }

  StepStats stats;
  const auto n_new = new_batch.size();
  const auto wanted = cfg.replay_count(n_new);
  stats.replay_skipped = buffer.empty();
  const auto replayed = buffer.empty() ? std::vector<ReplayEntry>{} : buffer.sample(wanted, rng);

  if (replayed.empty()) {
    stats = supervised_step(model, new_batch, learning_rate);
    stats.replay_skipped = buffer.empty();
  } else {
    const auto k = replayed.size();
    const auto dim = static_cast<Eigen::Index>(model.input_dim());
    const auto classes = static_cast<Eigen::Index>(model.output_dim());
    nn::Batch mixed;
    mixed.features.resize(static_cast<Eigen::Index>(n_new + k), dim);
    mixed.features.topRows(static_cast<Eigen::Index>(n_new)) = new_batch.features;
    mixed.labels = new_batch.labels;
    nn::CloningTargets targets;
    targets.stored_probs.resize(static_cast<Eigen::Index>(k), classes);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& e = replayed[i];
      if (e.stored_probs.size() != model.output_dim()) {
        throw DimensionError("replayed entry has " + std::to_string(e.stored_probs.size()) +
                             " stored probabilities for " + std::to_string(model.output_dim()) +
                             " classes");
      }
      const auto row = static_cast<Eigen::Index>(n_new + i);
      mixed.features.row(row) = Eigen::Map<const nn::RowVector>(e.features.data(), dim);
      mixed.labels.push_back(e.label);
      targets.rows.push_back(n_new + i);
      targets.stored_probs.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const nn::RowVector>(e.stored_probs.data(), classes);
      targets.stored_values.push_back(e.stored_value);
    }
    const nn::LossSpec spec{nn::LossKind::kCrossEntropyCloning, cfg.kl_weight, cfg.value_weight};
    auto result = nn::backward(model, mixed, spec, &targets);
    nn::apply_sgd(model, result.gradients, learning_rate);
    stats.loss = result.loss;
    stats.new_rows = n_new;
    stats.replay_rows = k;
  }

  const auto cache = nn::forward(model, new_batch.features);
  const nn::Matrix probs = nn::softmax_rows(cache.logits);
  for (std::size_t i = 0; i < n_new; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    ReplayEntry entry;
    entry.features.assign(new_batch.features.row(row).begin(), new_batch.features.row(row).end());
    entry.label = new_batch.labels[i];
    entry.stored_probs.assign(probs.row(row).begin(), probs.row(row).end());
    entry.stored_value = cache.values ? (*cache.values)(row) : 0.0;
    buffer.insert(std::move(entry), rng);
  }
  return stats;
}

}  // namespace fcil::clear
