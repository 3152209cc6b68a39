#include "fcil/cil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fcil/csv.hpp"
#include "fcil/errors.hpp"

namespace fcil::cil {

namespace {

constexpr std::uint64_t kScheduleStream = 0x53434844;  // "SCHD"
constexpr std::uint64_t kSynthStream = 0x53594e54;     // "SYNT"
constexpr std::uint64_t kCentralStream = 0x43454e54;   // "CENT"
constexpr std::uint64_t kCentralReplayStream = 0x43524550;  // "CREP"
constexpr std::size_t kEvalChunk = 8192;

template <typename T>
nlohmann::json optional_number(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::vector<nn::ClassIndex> TaskSchedule::seen_classes(std::size_t task) const {
  std::vector<nn::ClassIndex> out;
  for (std::size_t i = 0; i <= task && i < tasks.size(); ++i) {
    out.insert(out.end(), tasks[i].classes.begin(), tasks[i].classes.end());
  }
  return out;
}

fed::TaskPlan TaskSchedule::task_plan(std::size_t rounds_per_task) const {
  fed::TaskPlan plan;
  plan.rounds_per_task = rounds_per_task;
  for (const auto& t : tasks) {
    plan.task_classes.push_back(t.classes);
  }
  return plan;
}

nlohmann::json TaskSchedule::to_json() const {
  nlohmann::json doc;
  doc["class_names"] = class_names;
  doc["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  auto& list = doc["tasks"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    nlohmann::json names = nlohmann::json::array();
    for (const auto c : tasks[i].classes) {
      names.push_back(class_names.at(c));
    }
    list.push_back({{"task_index", i},
                    {"classes", names},
                    {"introduced_class", class_names.at(tasks[i].introduced)}});
  }
  return doc;
}

TaskSchedule TaskSchedule::from_json(const nlohmann::json& doc) {
  try {
    TaskSchedule s;
    s.class_names = doc.at("class_names").get<std::vector<std::string>>();
    if (doc.contains("seed") && !doc.at("seed").is_null()) {
      s.seed = doc.at("seed").get<std::uint64_t>();
    }
    const auto index_of = [&](const std::string& name) {
      const auto it = std::find(s.class_names.begin(), s.class_names.end(), name);
      if (it == s.class_names.end()) {
        throw SchemaError("schedule names unknown class '" + name + "'");
      }
      return static_cast<nn::ClassIndex>(it - s.class_names.begin());
    };
    for (const auto& t : doc.at("tasks")) {
      Task task;
      for (const auto& name : t.at("classes")) {
        task.classes.push_back(index_of(name.get<std::string>()));
      }
      task.introduced = index_of(t.at("introduced_class").get<std::string>());
      s.tasks.push_back(std::move(task));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad schedule document: ") + e.what());
  }
}

TaskSchedule build_schedule(std::span<const std::string> class_names, const ScheduleOrder& order,
                            std::span<const std::size_t> class_counts) {
  if (class_names.size() < 2) {
    throw ConfigError("a schedule needs Benign and at least one attack class");
  }
  if (class_names[0] != flow::kBenign) {
    throw ConfigError("class 0 must be '" + std::string(flow::kBenign) + "', got '" + class_names[0] + "'");
  }
  if (!class_counts.empty()) {
    if (class_counts.size() != class_names.size()) {
      throw ConfigError("class count list does not match the class names");
    }
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      if (class_counts[c] == 0) {
        throw ConfigError("class '" + class_names[c] + "' has no samples");
      }
    }
  }
  std::set<std::string> unique(class_names.begin(), class_names.end());
  if (unique.size() != class_names.size()) {
    throw ConfigError("duplicate class names");
  }

  std::vector<nn::ClassIndex> attacks;
  TaskSchedule schedule;
  schedule.class_names.assign(class_names.begin(), class_names.end());
  if (order.kind == ScheduleOrder::Kind::kRandom) {
    attacks.resize(class_names.size() - 1);
    std::iota(attacks.begin(), attacks.end(), nn::ClassIndex{1});
    Rng rng(derive_seed(order.seed, {kScheduleStream}));
    rng.shuffle(attacks);
    schedule.seed = order.seed.value;
  } else {
    auto names = order.attacks;
    if (!names.empty() && names.front() == flow::kBenign) {
      names.erase(names.begin());
    }
    std::set<nn::ClassIndex> used;
    for (const auto& name : names) {
      const auto it = std::find(class_names.begin(), class_names.end(), name);
      if (it == class_names.end() || it == class_names.begin()) {
        throw ConfigError("schedule lists '" + name + "', which is not an attack class of the dataset");
      }
      const auto idx = static_cast<nn::ClassIndex>(it - class_names.begin());
      if (!used.insert(idx).second) {
        throw ConfigError("schedule lists '" + name + "' twice");
      }
      attacks.push_back(idx);
    }
    for (std::size_t c = 1; c < class_names.size(); ++c) {
      if (!used.contains(c)) {
        throw ConfigError("schedule omits class '" + class_names[c] + "'");
      }
    }
  }
  schedule.tasks.push_back(Task{{0, attacks[0]}, attacks[0]});
  for (std::size_t i = 1; i < attacks.size(); ++i) {
    schedule.tasks.push_back(Task{{attacks[i]}, attacks[i]});
  }
  return schedule;
}

flow::Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) {
    throw ConfigError("synthetic data needs at least two classes");
  }
  if (spec.dim == 0 || spec.clusters_per_class == 0) {
    throw ConfigError("synthetic dim and clusters_per_class must be positive");
  }
  if (!spec.class_sizes.empty() && spec.class_sizes.size() != spec.classes) {
    throw ConfigError("class_sizes must list one count per class");
  }
  if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation)) {
    throw ConfigError("separation must be finite and non-negative");
  }
  flow::Dataset ds;
  ds.class_names.emplace_back(flow::kBenign);
  for (std::size_t c = 1; c < spec.classes; ++c) {
    ds.class_names.push_back("Attack" + std::to_string(c));
  }
  for (std::size_t f = 0; f < spec.dim; ++f) {
    ds.feature_names.push_back("f" + std::to_string(f));
  }

  Rng rng(derive_seed(spec.seed, {kSynthStream}));
  std::vector<std::vector<std::vector<double>>> centers(spec.classes);
  for (auto& class_centers : centers) {
    for (std::size_t k = 0; k < spec.clusters_per_class; ++k) {
      std::vector<double> v(spec.dim);
      double norm = 0.0;
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (auto& x : v) {
        x = norm > 0.0 ? spec.separation * x / norm : 0.0;
      }
      class_centers.push_back(std::move(v));
    }
  }
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const auto count = spec.count_of(c);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& center = centers[c][i % spec.clusters_per_class];
      flow::FlowRecord rec;
      rec.label = c;
      rec.class_name = ds.class_names[c];
      rec.features.resize(spec.dim);
      for (std::size_t f = 0; f < spec.dim; ++f) {
        rec.features[f] = center[f] + rng.normal();
      }
      ds.records.push_back(std::move(rec));
    }
  }
  rng.shuffle(ds.records);
  return ds;
}

void CentralConfig::validate() const {
  if (batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
  if (iterations_per_task.has_value() == epochs_per_task.has_value()) {
    throw ConfigError("set exactly one of iterations_per_task / epochs_per_task");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (mode == fed::TrainMode::kClear) {
    clear.validate();
  }
}

nlohmann::json CentralConfig::to_json() const {
  nlohmann::json doc;
  doc["batch_size"] = batch_size;
  doc["iterations_per_task"] = optional_number(iterations_per_task);
  doc["epochs_per_task"] = optional_number(epochs_per_task);
  doc["learning_rate"] = learning_rate;
  doc["mode"] = std::string(fed::to_string(mode));
  doc["seed"] = seed.value;
  return doc;
}

CentralizedTrainer::CentralizedTrainer(nn::MlpModel init, CentralConfig cfg)
    : model_(std::move(init)), cfg_(std::move(cfg)), buffer_(cfg_.clear.buffer_capacity) {
  cfg_.validate();
  model_.validate();
}

void CentralizedTrainer::train_task(std::size_t task_index, const Task&, const flow::Dataset& task_train) {
  const auto n = task_train.size();
  if (n == 0) {
    return;
  }
  if (task_train.width() != model_.input_dim()) {
    throw DimensionError("training data width " + std::to_string(task_train.width()) +
                         " does not match model input " + std::to_string(model_.input_dim()));
  }
  Rng rng(derive_seed(cfg_.seed, {kCentralStream, task_index}));
  Rng replay_rng(derive_seed(cfg_.seed, {kCentralReplayStream, task_index}));
  const auto batch = std::min(cfg_.batch_size, n);
  const std::size_t steps_per_pass = (n + batch - 1) / batch;
  const std::size_t total_steps =
      cfg_.iterations_per_task ? *cfg_.iterations_per_task : *cfg_.epochs_per_task * steps_per_pass;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;
  std::vector<std::size_t> rows;
  for (std::size_t step = 0; step < total_steps; ++step) {
    if (batch == n) {
      rows = order;
    } else {
      const bool exhausted = cfg_.iterations_per_task ? cursor + batch > n : cursor >= n;
      if (exhausted) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto take = std::min(batch, n - cursor);
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                  order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      cursor += take;
    }
    const auto mini = task_train.to_batch(rows);
    const auto stats = cfg_.mode == fed::TrainMode::kClear
                           ? clear::clear_train_step(model_, mini, buffer_, cfg_.clear,
                                                     cfg_.learning_rate, replay_rng)
                           : clear::supervised_step(model_, mini, cfg_.learning_rate);
    loss_trace_.push_back(stats.loss.total);
  }
}

nlohmann::json CentralizedTrainer::describe() const {
  auto doc = cfg_.to_json();
  doc["trainer"] = "centralized";
  return doc;
}

FederatedTrainer::FederatedTrainer(nn::MlpModel init, fed::FedConfig cfg,
                                   fed::RoundExecutor& executor, fed::LocalTraining training)
    : model_(std::move(init)), cfg_(std::move(cfg)), executor_(executor), training_(training) {
  cfg_.validate();
  model_.validate();
}

void FederatedTrainer::train_task(std::size_t task_index, const Task&, const flow::Dataset&) {
  const auto first = static_cast<std::uint32_t>(task_index * cfg_.rounds);
  auto result = fed::run_federation(cfg_, executor_, model_, first);
  model_ = std::move(result.model);
  for (auto& r : result.history) {
    history_.push_back(std::move(r));
  }
}

nlohmann::json FederatedTrainer::describe() const {
  nlohmann::json doc;
  doc["trainer"] = "federated";
  doc["clients"] = cfg_.clients;
  doc["participation"] = cfg_.participation;
  doc["batch_size"] = cfg_.batch_size;
  doc["epochs"] = optional_number(cfg_.epochs);
  doc["local_iterations"] = optional_number(cfg_.local_iterations);
  doc["learning_rate"] = cfg_.learning_rate;
  doc["rounds_per_task"] = cfg_.rounds;
  doc["seed"] = cfg_.seed.value;
  doc["f32_boundary"] = cfg_.f32_boundary;
  doc["mode"] = std::string(fed::to_string(training_.mode));
  return doc;
}

ForgettingReport forgetting(const std::vector<std::vector<std::optional<double>>>& recall_history) {
  ForgettingReport out;
  if (recall_history.size() < 2) {
    return out;
  }
  const auto& last = recall_history.back();
  for (std::size_t j = 0; j < last.size(); ++j) {
    if (!last[j]) {
      continue;
    }
    std::optional<double> best;
    for (std::size_t i = 0; i + 1 < recall_history.size(); ++i) {
      if (j < recall_history[i].size() && recall_history[i][j]) {
        best = std::max(best.value_or(*recall_history[i][j]), *recall_history[i][j]);
      }
    }
    if (!best) {
      continue;
    }
    out.raw[j] = *best - *last[j];
    out.floored[j] = std::max(0.0, out.raw[j]);
  }
  if (!out.raw.empty()) {
    for (const auto& [j, v] : out.raw) {
      out.mean_raw += v;
      out.mean_floored += out.floored[j];
    }
    out.mean_raw /= static_cast<double>(out.raw.size());
    out.mean_floored /= static_cast<double>(out.raw.size());
  }
  return out;
}

std::vector<std::vector<std::optional<double>>> CilReport::recall_matrix() const {
  std::vector<std::vector<std::optional<double>>> r;
  for (const auto& t : tasks) {
    std::vector<std::optional<double>> row(schedule.class_names.size());
    for (const auto& [cls, recall] : t.per_class_recall) {
      row.at(cls) = recall;
    }
    r.push_back(std::move(row));
  }
  return r;
}

double CilReport::first_task_recall() const {
  if (tasks.empty() || schedule.tasks.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto cls : schedule.tasks.front().classes) {
    const auto it = tasks.back().per_class_recall.find(cls);
    if (it != tasks.back().per_class_recall.end() && it->second) {
      sum += *it->second;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

nlohmann::json CilReport::to_json(bool with_timing) const {
  nlohmann::json doc;
  doc["config"] = config;
  doc["schedule"] = schedule.to_json();
  auto& list = doc["tasks"] = nlohmann::json::array();
  const auto& names = schedule.class_names;
  for (const auto& t : tasks) {
    nlohmann::json entry;
    entry["task_index"] = t.task_index;
    entry["introduced_class"] = names.at(t.introduced);
    nlohmann::json classes = nlohmann::json::array();
    for (const auto c : t.classes) {
      classes.push_back(names.at(c));
    }
    entry["classes"] = classes;
    entry["metrics"] = t.metrics.to_json();
    entry["metrics_full"] = t.metrics_full.to_json();
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [cls, value] : t.per_class_recall) {
      recall[names.at(cls)] = optional_number(value);
    }
    entry["per_class_recall"] = recall;
    entry["confusion"] = t.confusion.to_json();
    list.push_back(std::move(entry));
  }
  nlohmann::json forget;
  forget["raw"] = nlohmann::json::object();
  forget["floored"] = nlohmann::json::object();
  for (const auto& [cls, v] : forgetting.raw) {
    forget["raw"][names.at(cls)] = v;
    forget["floored"][names.at(cls)] = forgetting.floored.at(cls);
  }
  forget["mean_raw"] = forgetting.mean_raw;
  forget["mean_floored"] = forgetting.mean_floored;
  forget["first_task_recall"] = first_task_recall();
  doc["forgetting"] = forget;
  if (with_timing) {
    nlohmann::json per_task = nlohmann::json::array();
    double total = 0.0;
    for (const auto& t : tasks) {
      per_task.push_back(t.wall_seconds);
      total += t.wall_seconds;
    }
    doc["wall_times"] = {{"per_task_seconds", per_task}, {"total_seconds", total}};
  }
  return doc;
}

std::string report_csv(const nlohmann::json& report, bool full_test_set) {
  std::ostringstream out;
  out << "task_index";
  for (const auto h : MetricsRow::headers()) {
    out << ',' << csv::escape(h);
  }
  out << '\n';
  try {
    for (const auto& t : report.at("tasks")) {
      const auto row = MetricsRow::from_json(t.at(full_test_set ? "metrics_full" : "metrics"));
      out << t.at("task_index").get<std::size_t>();
      for (const auto v : row.values()) {
        out << ',' << csv::format_number(v);
      }
      out << '\n';
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("report has no usable task list: ") + e.what());
  }
  return out.str();
}

std::string CilReport::to_csv(bool full_test_set) const {
  return report_csv(to_json(false), full_test_set);
}

ConfusionMatrix evaluate(const nn::MlpModel& model, const flow::Dataset& data) {
  ConfusionMatrix cm(model.output_dim(),
                     data.class_names.size() == model.output_dim() ? data.class_names
                                                                    : std::vector<std::string>{});
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const auto end = std::min(data.size(), start + kEvalChunk);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto batch = data.to_batch(rows);
    const auto preds = nn::predict(model, batch.features);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (batch.labels[i] >= cm.num_classes()) {
        throw IndexError("label " + std::to_string(batch.labels[i]) + " outside the model output");
      }
      ++cm.counts[batch.labels[i]][preds[i]];
    }
  }
  return cm;
}

CilReport run_cil(const TaskSchedule& schedule, IncrementalTrainer& trainer,
                  const flow::Dataset& train, const flow::Dataset& test, nlohmann::json config_echo) {
  if (schedule.tasks.empty()) {
    throw ConfigError("schedule has no tasks");
  }
  if (train.class_names != schedule.class_names || test.class_names != schedule.class_names) {
    throw ConfigError("schedule classes do not match the dataset classes");
  }
  if (trainer.model().output_dim() != schedule.class_names.size()) {
    throw ConfigError("model has " + std::to_string(trainer.model().output_dim()) +
                      " outputs for " + std::to_string(schedule.class_names.size()) + " classes");
  }
  CilReport report;
  report.config = std::move(config_echo);
  report.config["trainer"] = trainer.describe();
  report.schedule = schedule;

  for (std::size_t i = 0; i < schedule.tasks.size(); ++i) {
    const auto& task = schedule.tasks[i];
    const auto task_train = train.filter_classes(task.classes);
    const auto t0 = std::chrono::steady_clock::now();
    trainer.train_task(i, task, task_train);
    const auto t1 = std::chrono::steady_clock::now();

    TaskResult result;
    result.task_index = i;
    result.classes = task.classes;
    result.introduced = task.introduced;
    result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    const auto seen = schedule.seen_classes(i);
    const auto cumulative = test.filter_classes(seen);
    if (cumulative.empty()) {
      throw InputError("no test records for the classes seen by task " + std::to_string(i));
    }
    result.confusion = evaluate(trainer.model(), cumulative);
    result.metrics = metrics_row(result.confusion);
    result.metrics_full = metrics_row(evaluate(trainer.model(), test));
    for (const auto cls : seen) {
      const auto m = class_metrics(result.confusion, cls);
      result.per_class_recall[cls] = m.recall_undefined ? std::nullopt : std::optional<double>(m.recall);
    }
    report.tasks.push_back(std::move(result));
  }
  report.forgetting = forgetting(report.recall_matrix());
  return report;
}

}  // namespace fcil::cil
