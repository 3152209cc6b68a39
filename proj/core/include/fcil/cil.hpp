#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcil/clear.hpp"
#include "fcil/dataset.hpp"
#include "fcil/fed.hpp"
#include "fcil/metrics.hpp"
#include "fcil/nn.hpp"
#include "fcil/replay.hpp"
#include "fcil/rng.hpp"

namespace fcil::cil {

struct Task {
  std::vector<nn::ClassIndex> classes;
  /// The attack this task brings in.
  nn::ClassIndex introduced = 0;
};

/// Task 0 holds Benign and the first attack; every later task adds one attack.
struct TaskSchedule {
  std::vector<std::string> class_names;
  std::vector<Task> tasks;
  std::optional<std::uint64_t> seed;

  std::size_t size() const { return tasks.size(); }
  /// Classes of tasks 0..task, in introduction order.
  std::vector<nn::ClassIndex> seen_classes(std::size_t task) const;
  /// The per-round class plan for federated training with `rounds_per_task` rounds each.
  fed::TaskPlan task_plan(std::size_t rounds_per_task) const;

  nlohmann::json to_json() const;
  static TaskSchedule from_json(const nlohmann::json& doc);
};

struct ScheduleOrder {
  enum class Kind { kRandom, kExplicit };
  Kind kind = Kind::kRandom;
  RngSeed seed{};
  /// Attack names in introduction order; a leading "Benign" is allowed.
  std::vector<std::string> attacks;

  static ScheduleOrder random(RngSeed seed) { return {Kind::kRandom, seed, {}}; }
  static ScheduleOrder explicit_order(std::vector<std::string> attacks) {
    return {Kind::kExplicit, {}, std::move(attacks)};
  }
};

/// Needs Benign at index 0 and at least one attack. With `class_counts`, classes
/// without samples are rejected. Throws ConfigError.
TaskSchedule build_schedule(std::span<const std::string> class_names, const ScheduleOrder& order,
                            std::span<const std::size_t> class_counts = {});

struct SyntheticSpec {
  std::size_t classes = 4;
  /// Samples per class; overrides `per_class` when non-empty (a 0 entry leaves the class empty).
  std::vector<std::size_t> class_sizes;
  std::size_t per_class = 500;
  std::size_t dim = 12;
  /// Distance scale between class centers in units of the within-cluster std.
  double separation = 4.0;
  std::size_t clusters_per_class = 1;
  RngSeed seed{};

  std::size_t count_of(std::size_t cls) const {
    return class_sizes.empty() ? per_class : class_sizes.at(cls);
  }
};

/// Gaussian clusters; classes are "Benign", "Attack1", ... and features "f0", "f1", ...
/// Records are shuffled. Deterministic per seed.
flow::Dataset generate_synthetic(const SyntheticSpec& spec);

/// Something that can learn one task at a time.
class IncrementalTrainer {
 public:
  virtual ~IncrementalTrainer() = default;
  /// `task_train` holds only the task's classes.
  virtual void train_task(std::size_t task_index, const Task& task, const flow::Dataset& task_train) = 0;
  virtual const nn::MlpModel& model() const = 0;
  virtual nlohmann::json describe() const = 0;
};

struct CentralConfig {
  std::size_t batch_size = 64;
  /// Exactly one of these is set.
  std::optional<std::size_t> iterations_per_task = 300;
  std::optional<std::size_t> epochs_per_task;
  double learning_rate = 0.01;
  fed::TrainMode mode = fed::TrainMode::kClear;
  clear::ClearConfig clear;
  RngSeed seed{};

  void validate() const;
  nlohmann::json to_json() const;
};

/// Single-model trainer whose replay buffer persists across tasks.
class CentralizedTrainer final : public IncrementalTrainer {
 public:
  CentralizedTrainer(nn::MlpModel init, CentralConfig cfg);

  void train_task(std::size_t task_index, const Task& task, const flow::Dataset& task_train) override;
  const nn::MlpModel& model() const override { return model_; }
  nlohmann::json describe() const override;

  const clear::ReplayBuffer& buffer() const { return buffer_; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }

 private:
  nn::MlpModel model_;
  CentralConfig cfg_;
  clear::ReplayBuffer buffer_;
  std::vector<double> loss_trace_;
};

/// FedAvg trainer: task t covers global rounds t*N .. t*N+N-1 (N = cfg.rounds). The
/// executor's clients restrict themselves to the task classes through a TaskPlan.
class FederatedTrainer final : public IncrementalTrainer {
 public:
  FederatedTrainer(nn::MlpModel init, fed::FedConfig cfg, fed::RoundExecutor& executor,
                   fed::LocalTraining training);

  void train_task(std::size_t task_index, const Task& task, const flow::Dataset& task_train) override;
  const nn::MlpModel& model() const override { return model_; }
  nlohmann::json describe() const override;

  const fed::RoundHistory& history() const { return history_; }

 private:
  nn::MlpModel model_;
  fed::FedConfig cfg_;
  fed::RoundExecutor& executor_;
  fed::LocalTraining training_;
  fed::RoundHistory history_;
};

struct TaskResult {
  std::size_t task_index = 0;
  std::vector<nn::ClassIndex> classes;
  nn::ClassIndex introduced = 0;
  /// On the test records of every class seen so far.
  MetricsRow metrics;
  ConfusionMatrix confusion;
  /// On the whole test set.
  MetricsRow metrics_full;
  /// Recall per seen class on the cumulative set; nullopt when the class has no test records.
  std::map<nn::ClassIndex, std::optional<double>> per_class_recall;
  double wall_seconds = 0.0;
};

struct ForgettingReport {
  /// Best earlier recall minus final recall, per class introduced before the last task.
  std::map<nn::ClassIndex, double> raw;
  std::map<nn::ClassIndex, double> floored;
  double mean_raw = 0.0;
  double mean_floored = 0.0;
};

/// recall_history[i][j]: recall of class j after task i (nullopt where undefined).
ForgettingReport forgetting(const std::vector<std::vector<std::optional<double>>>& recall_history);

struct CilReport {
  nlohmann::json config;
  TaskSchedule schedule;
  std::vector<TaskResult> tasks;
  ForgettingReport forgetting;

  /// R[i][j] as a dense table (nullopt before class j is introduced).
  std::vector<std::vector<std::optional<double>>> recall_matrix() const;
  /// Mean final recall over the task-0 classes.
  double first_task_recall() const;

  /// Full report; `with_timing` false drops wall_times so the output is hash-stable.
  nlohmann::json to_json(bool with_timing = true) const;
  /// One row per task: task_index then the eight metric headers.
  std::string to_csv(bool full_test_set = false) const;
};

/// CSV text from a report JSON document (the `report` re-render path).
std::string report_csv(const nlohmann::json& report, bool full_test_set = false);

/// Trains task by task and evaluates after each one. Throws ConfigError when the
/// schedule and dataset class lists disagree.
CilReport run_cil(const TaskSchedule& schedule, IncrementalTrainer& trainer,
                  const flow::Dataset& train, const flow::Dataset& test,
                  nlohmann::json config_echo = nlohmann::json::object());

/// Confusion matrix of the model's predictions on `data`.
ConfusionMatrix evaluate(const nn::MlpModel& model, const flow::Dataset& data);

}  // namespace fcil::cil
