#pragma once

#include <cstddef>

#include "fcil/nn.hpp"
#include "fcil/replay.hpp"
#include "fcil/rng.hpp"

namespace fcil::clear {

struct ClearConfig {
  /// Share of each mixed mini-batch drawn from the buffer, in [0, 1).
  double replay_fraction = 0.5;
  double kl_weight = 1.0;
  double value_weight = 0.0;
  std::size_t buffer_capacity = 100;
  /// Attach a scalar value head to new models (needed for value_weight > 0).
  bool value_head = false;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
  /// Replay rows to add next to `new_rows` fresh rows so that they form replay_fraction of the batch.
  std::size_t replay_count(std::size_t new_rows) const;
};

struct StepStats {
  nn::LossBreakdown loss;
  std::size_t new_rows = 0;
  std::size_t replay_rows = 0;
  /// Set when the buffer was empty and the cloning terms were skipped.
  bool replay_skipped = false;
};

/// One supervised CLEAR update: mixes new rows with replayed rows, takes an SGD step on
/// cross-entropy (all rows) plus KL and value cloning (replay rows only), then stores
/// every new row with the updated model's outputs.
StepStats clear_train_step(nn::MlpModel& model, const nn::Batch& new_batch, ReplayBuffer& buffer,
                           const ClearConfig& cfg, double learning_rate, Rng& rng);

/// Plain supervised step on cross-entropy.
StepStats supervised_step(nn::MlpModel& model, const nn::Batch& batch, double learning_rate);

}  // namespace fcil::clear
