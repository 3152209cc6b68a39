#include "config.hpp"

#include <fstream>
#include <functional>

#include "fcil/errors.hpp"
#include "fcil_config_schema.hpp"

namespace fcil::app {

using nlohmann::json;

namespace {

bool has_type(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

void check(const json& value, const json& schema, const std::string& path) {
  const auto where = path.empty() ? std::string("/") : path;
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_array()) {
      for (const auto& name : t) {
        ok = ok || has_type(value, name.get<std::string>());
      }
    } else {
      ok = has_type(value, t.get<std::string>());
    }
    if (!ok) {
      throw ConfigError("config " + where + ": expected type " + t.dump() + ", got " + value.dump());
    }
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& option : schema["enum"]) {
      ok = ok || option == value;
    }
    if (!ok) {
      throw ConfigError("config " + where + ": " + value.dump() + " is not one of " + schema["enum"].dump());
    }
  }
  if (value.is_number()) {
    const double x = value.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) {
      throw ConfigError("config " + where + ": " + value.dump() + " is below " + schema["minimum"].dump());
    }
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) {
      throw ConfigError("config " + where + ": " + value.dump() + " is above " + schema["maximum"].dump());
    }
    if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>()) {
      throw ConfigError("config " + where + ": " + value.dump() + " must exceed " +
                        schema["exclusiveMinimum"].dump());
    }
    if (schema.contains("exclusiveMaximum") && x >= schema["exclusiveMaximum"].get<double>()) {
      throw ConfigError("config " + where + ": " + value.dump() + " must be below " +
                        schema["exclusiveMaximum"].dump());
    }
  }
  if (value.is_object()) {
    const auto props = schema.value("properties", json::object());
    const bool closed = schema.contains("additionalProperties") && schema["additionalProperties"] == false;
    for (const auto& [key, child] : value.items()) {
      if (props.contains(key)) {
        check(child, props[key], path + "/" + key);
      } else if (closed) {
        throw ConfigError("config " + where + ": unknown key '" + key + "'");
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      check(value[i], schema["items"], path + "/" + std::to_string(i));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    out = obj[key].get<T>();
  }
}

template <typename T>
void read(const json& obj, const char* key, std::optional<T>& out) {
  if (obj.contains(key)) {
    out = obj[key].is_null() ? std::nullopt : std::optional<T>(obj[key].get<T>());
  }
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

/// Picks between a step count and an epoch count: naming only one in the file switches modes.
void read_steps(const json& obj, const char* steps_key, const char* epochs_key,
                std::optional<std::size_t>& steps, std::optional<std::size_t>& epochs) {
  const bool has_steps = obj.contains(steps_key);
  const bool has_epochs = obj.contains(epochs_key);
  read(obj, steps_key, steps);
  read(obj, epochs_key, epochs);
  if (has_epochs && !has_steps && epochs) {
    steps.reset();
  }
}

}  // namespace

const json& config_schema() {
  static const json schema = json::parse(kConfigSchemaText);
  return schema;
}

void validate_against_schema(const json& doc, const json& schema) { check(doc, schema, ""); }

RngSeed stream_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t tag = 0;
  for (const char c : stream) {
    tag = tag * 131 + static_cast<unsigned char>(c);
  }
  return derive_seed(RngSeed{root}, {tag});
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  validate_against_schema(doc, config_schema());
  ExperimentConfig cfg;
  read(doc, "seed", cfg.seed);
  read(doc, "out_dir", cfg.out_dir);
  if (doc.contains("data")) {
    const auto& d = doc["data"];
    read(d, "train", cfg.data.train);
    read(d, "test", cfg.data.test);
    if (d.contains("synthetic") && !d["synthetic"].is_null()) {
      const auto& s = d["synthetic"];
      cil::SyntheticSpec spec;
      read(s, "classes", spec.classes);
      read(s, "per_class", spec.per_class);
      read(s, "dim", spec.dim);
      read(s, "separation", spec.separation);
      read(s, "clusters_per_class", spec.clusters_per_class);
      cfg.data.synthetic = spec;
    }
    read(d, "label_column", cfg.data.label_column);
    read(d, "exclude_columns", cfg.data.exclude_columns);
    read(d, "classes", cfg.data.classes);
    read(d, "normalization", cfg.data.normalization);
    read(d, "test_fraction", cfg.data.test_fraction);
  }
  if (doc.contains("model")) {
    read(doc["model"], "hidden", cfg.hidden);
  }
  if (doc.contains("schedule")) {
    const auto& s = doc["schedule"];
    read(s, "order", cfg.schedule.order);
    read(s, "attacks", cfg.schedule.attacks);
    read(s, "seed", cfg.schedule.seed);
  }
  if (doc.contains("train")) {
    const auto& t = doc["train"];
    if (t.contains("mode")) {
      cfg.train.mode = fed::parse_train_mode(t["mode"].get<std::string>());
    }
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "learning_rate", cfg.train.learning_rate);
    read_steps(t, "iterations_per_task", "epochs_per_task", cfg.train.iterations_per_task,
               cfg.train.epochs_per_task);
  }
  if (doc.contains("clear")) {
    const auto& c = doc["clear"];
    read(c, "replay_fraction", cfg.clear.replay_fraction);
    read(c, "kl_weight", cfg.clear.kl_weight);
    read(c, "value_weight", cfg.clear.value_weight);
    read(c, "buffer_capacity", cfg.clear.buffer_capacity);
    read(c, "value_head", cfg.clear.value_head);
  }
  if (doc.contains("federated")) {
    const auto& f = doc["federated"];
    auto& fed = cfg.federated;
    read(f, "clients", fed.clients);
    read(f, "participation", fed.participation);
    read(f, "rounds_per_task", fed.rounds_per_task);
    read_steps(f, "local_iterations", "epochs", fed.local_iterations, fed.epochs);
    read(f, "partition", fed.partition);
    read(f, "dirichlet_alpha", fed.dirichlet_alpha);
    read(f, "f32_boundary", fed.f32_boundary);
    read(f, "round_timeout_ms", fed.round_timeout_ms);
    read(f, "join_timeout_ms", fed.join_timeout_ms);
    read(f, "listen", fed.listen);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config file '" + path.string() + "'");
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

json ExperimentConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["out_dir"] = out_dir;
  json synth = nullptr;
  if (data.synthetic) {
    synth = {{"classes", data.synthetic->classes},
             {"per_class", data.synthetic->per_class},
             {"dim", data.synthetic->dim},
             {"separation", data.synthetic->separation},
             {"clusters_per_class", data.synthetic->clusters_per_class}};
  }
  doc["data"] = {{"train", optional_json(data.train)},
                 {"test", optional_json(data.test)},
                 {"synthetic", synth},
                 {"label_column", data.label_column},
                 {"exclude_columns", data.exclude_columns},
                 {"classes", data.classes},
                 {"normalization", data.normalization},
                 {"test_fraction", data.test_fraction}};
  doc["model"] = {{"hidden", hidden}};
  doc["schedule"] = {{"order", schedule.order},
                     {"attacks", schedule.attacks},
                     {"seed", optional_json(schedule.seed)}};
  doc["train"] = {{"mode", std::string(fed::to_string(train.mode))},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"iterations_per_task", optional_json(train.iterations_per_task)},
                  {"epochs_per_task", optional_json(train.epochs_per_task)}};
  doc["clear"] = {{"replay_fraction", clear.replay_fraction},
                  {"kl_weight", clear.kl_weight},
                  {"value_weight", clear.value_weight},
                  {"buffer_capacity", clear.buffer_capacity},
                  {"value_head", clear.value_head}};
  doc["federated"] = {{"clients", federated.clients},
                      {"participation", federated.participation},
                      {"rounds_per_task", federated.rounds_per_task},
                      {"local_iterations", optional_json(federated.local_iterations)},
                      {"epochs", optional_json(federated.epochs)},
                      {"partition", federated.partition},
                      {"dirichlet_alpha", federated.dirichlet_alpha},
                      {"f32_boundary", federated.f32_boundary},
                      {"round_timeout_ms", federated.round_timeout_ms},
                      {"join_timeout_ms", federated.join_timeout_ms},
                      {"listen", federated.listen}};
  return doc;
}

void ExperimentConfig::validate() const {
  if (!data.synthetic && !data.train) {
    throw ConfigError("config names no data: set data.train or data.synthetic");
  }
  if (data.synthetic && data.train) {
    throw ConfigError("data.train and data.synthetic are mutually exclusive");
  }
  if (schedule.order == "explicit" && schedule.attacks.empty()) {
    throw ConfigError("schedule.order is explicit but schedule.attacks is empty");
  }
  if (clear.value_weight > 0.0 && !clear.value_head) {
    throw ConfigError("clear.value_weight > 0 needs clear.value_head");
  }
  central_config().validate();
  fed_config().validate();
  clear.validate();
}

fed::FedConfig ExperimentConfig::fed_config() const {
  fed::FedConfig f;
  f.clients = federated.clients;
  f.participation = federated.participation;
  f.batch_size = train.batch_size;
  f.local_iterations = federated.local_iterations;
  f.epochs = federated.epochs;
  f.learning_rate = train.learning_rate;
  f.rounds = federated.rounds_per_task;
  f.seed = stream_seed(seed, "federated");
  f.f32_boundary = federated.f32_boundary;
  f.round_timeout = std::chrono::milliseconds(federated.round_timeout_ms);
  return f;
}

fed::LocalTraining ExperimentConfig::local_training() const { return {train.mode, clear}; }

cil::CentralConfig ExperimentConfig::central_config() const {
  cil::CentralConfig c;
  c.batch_size = train.batch_size;
  c.iterations_per_task = train.iterations_per_task;
  c.epochs_per_task = train.epochs_per_task;
  c.learning_rate = train.learning_rate;
  c.mode = train.mode;
  c.clear = clear;
  c.seed = stream_seed(seed, "central");
  return c;
}

cil::ScheduleOrder ExperimentConfig::schedule_order() const {
  if (schedule.order == "explicit") {
    return cil::ScheduleOrder::explicit_order(schedule.attacks);
  }
  return cil::ScheduleOrder::random(schedule.seed ? RngSeed{*schedule.seed} : stream_seed(seed, "schedule"));
}

}  // namespace fcil::app
