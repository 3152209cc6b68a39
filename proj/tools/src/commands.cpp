#include "commands.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "config.hpp"
#include "fcil/cil.hpp"
#include "fcil/errors.hpp"
#include "fcil/flow.hpp"
#include "fcil/model_io.hpp"
#include "fcil/net.hpp"
#include "pipeline.hpp"

extern char** environ;

namespace fcil::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) {
    throw ConfigError("this command needs --config");
  }
  auto cfg = ExperimentConfig::load(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
  }
  if (g.out_dir) {
    cfg.out_dir = *g.out_dir;
  }
  cfg.validate();
  return cfg;
}

json history_json(const fed::RoundHistory& history) {
  json rounds = json::array();
  for (const auto& r : history) {
    rounds.push_back({{"round", r.round},
                      {"selected", r.selected},
                      {"dropped", r.dropped},
                      {"idle", r.idle},
                      {"samples", r.samples},
                      {"aggregate_loss", r.aggregate_loss ? json(*r.aggregate_loss) : json(nullptr)}});
  }
  return rounds;
}

void write_report(const fs::path& dir, const cil::CilReport& report, const nn::MlpModel& model) {
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "report.csv", report.to_csv(false));
  write_text(dir / "report_full.csv", report.to_csv(true));
  const auto blob = nn::serialize_model(model);
  write_text(dir / "model.bin", std::string_view(reinterpret_cast<const char*>(blob.data()), blob.size()));
  const auto& last = report.tasks.back().metrics;
  spdlog::info("{} tasks: final accuracy {:.4f}, macro recall {:.4f}, binary FPR {:.4f}, first-task recall {:.4f}",
               report.tasks.size(), last.multiclass_accuracy, last.macro_recall, last.binary_fpr,
               report.first_task_recall());
  spdlog::info("wrote {}", (dir / "report.json").string());
}

json echo(const ExperimentConfig& cfg, std::string_view command, std::string_view mode = {}) {
  json doc;
  doc["command"] = std::string(command);
  if (!mode.empty()) {
    doc["mode"] = std::string(mode);
  }
  doc["experiment"] = cfg.to_json();
  return doc;
}

/// Child processes that are terminated if the parent leaves early.
class ChildGroup {
 public:
  ~ChildGroup() {
    for (const auto pid : pids_) {
      ::kill(pid, SIGTERM);
      int status = 0;
      ::waitpid(pid, &status, 0);
    }
  }

  void spawn(const std::vector<std::string>& args) {
    std::vector<char*> argv;
    for (const auto& a : args) {
      argv.push_back(const_cast<char*>(a.c_str()));
    }
    argv.push_back(nullptr);
    pid_t pid = 0;
    const int rc = ::posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, argv.data(), environ);
    if (rc != 0) {
      throw Error("cannot start client process: " + std::string(std::strerror(rc)));
    }
    pids_.push_back(pid);
  }

  /// Waits for every child; returns how many exited unsuccessfully.
  std::size_t wait_all() {
    std::size_t failed = 0;
    for (const auto pid : pids_) {
      int status = 0;
      ::waitpid(pid, &status, 0);
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        ++failed;
      }
    }
    pids_.clear();
    return failed;
  }

 private:
  std::vector<pid_t> pids_;
};

net::ServerOptions server_options(const ExperimentConfig& cfg, const PreparedData& data) {
  net::ServerOptions opts;
  opts.expected_clients = cfg.federated.clients;
  opts.feature_width = static_cast<std::uint32_t>(data.train.width());
  opts.num_classes = static_cast<std::uint32_t>(data.train.num_classes());
  opts.join_timeout = std::chrono::milliseconds(cfg.federated.join_timeout_ms);
  opts.round_timeout = std::chrono::milliseconds(cfg.federated.round_timeout_ms);
  return opts;
}

/// Federated CIL with the server side of the protocol; `spawn` starts local clients.
int serve_federation(ExperimentConfig cfg, const std::string& listen, bool spawn, const std::string& log_level) {
  if (!cfg.federated.f32_boundary) {
    spdlog::info("networked run: weights cross the wire as f32, enabling f32_boundary");
    cfg.federated.f32_boundary = true;
  }
  const auto data = prepare(cfg);
  const auto shards = make_shards(cfg, data.train);
  const fs::path out_dir = cfg.out_dir;
  const auto manifest_path = write_shards(out_dir / "shards", client_manifest(cfg, data, shards), shards);

  net::ParameterServer server(net::Endpoint::parse(listen), server_options(cfg, data));
  auto endpoint = net::Endpoint::parse(listen);
  endpoint.port = server.port();
  if (endpoint.host.empty() || endpoint.host == "0.0.0.0") {
    endpoint.host = "127.0.0.1";
  }
  spdlog::info("parameter server listening on {} for {} clients", endpoint.str(), cfg.federated.clients);

  ChildGroup children;
  if (spawn) {
    for (std::size_t k = 0; k < shards.size(); ++k) {
      const auto shard = out_dir / "shards" / ("client_" + std::to_string(k) + ".csv");
      children.spawn({"fcil", "client", "--connect", endpoint.str(), "--shard", shard.string(), "--manifest",
                      manifest_path.string(), "--client-id", std::to_string(k), "--log-level", log_level});
    }
  } else {
    spdlog::info("shards and manifest in {}", (out_dir / "shards").string());
  }

  const auto joined = server.accept_clients();
  if (joined < cfg.federated.clients) {
    spdlog::warn("only {} of {} clients joined", joined, cfg.federated.clients);
  }
  const auto fed = cfg.fed_config();
  cil::FederatedTrainer trainer(data.init, fed, server, cfg.local_training());
  const auto report = cil::run_cil(data.schedule, trainer, data.train, data.test,
                                   echo(cfg, spawn ? "fed" : "serve", "net"));
  server.shutdown();
  write_report(out_dir, report, trainer.model());
  write_text(out_dir / "rounds.json", history_json(trainer.history()).dump(2) + "\n");
  if (spawn && children.wait_all() > 0) {
    throw NetworkError("a client process exited with an error");
  }
  return 0;
}

std::vector<std::string> ordered_classes(const std::vector<std::string>& labels) {
  std::set<std::string> unique(labels.begin(), labels.end());
  std::vector<std::string> out;
  if (unique.erase(std::string(flow::kBenign)) > 0) {
    out.emplace_back(flow::kBenign);
  }
  out.insert(out.end(), unique.begin(), unique.end());
  return out;
}

}  // namespace

int cmd_synth(const GlobalOptions& g, const SynthOptions& o) {
  cil::SyntheticSpec spec;
  spec.classes = o.classes;
  spec.per_class = o.per_class;
  spec.dim = o.dim;
  spec.separation = o.separation;
  spec.clusters_per_class = o.clusters;
  spec.seed = RngSeed{g.seed.value_or(0)};
  const auto ds = cil::generate_synthetic(spec);
  fs::path out = o.output;
  if (g.out_dir && out.is_relative()) {
    out = fs::path(*g.out_dir) / out;
  }
  flow::write_flow_csv(out, ds);
  spdlog::info("wrote {} rows ({} classes, {} features) to {}", ds.size(), ds.num_classes(), ds.width(),
               out.string());
  return 0;
}

int cmd_preprocess(const GlobalOptions& g, const PreprocessOptions& o) {
  flow::Dataset ds;
  if (o.packets) {
    auto flows = flow::assemble_labelled_flows(flow::read_packet_csv(o.input), o.idle_timeout);
    if (std::any_of(flows.labels.begin(), flows.labels.end(), [](const auto& l) { return l.empty(); })) {
      throw SchemaError("packet CSV '" + o.input + "' has unlabelled packets; a label column is required");
    }
    ds.class_names = ordered_classes(flows.labels);
    for (const auto name : flow::feature_names()) {
      ds.feature_names.emplace_back(name);
    }
    for (std::size_t i = 0; i < flows.flows.size(); ++i) {
      const auto f = flow::featurize_flow(flows.flows[i]);
      flow::FlowRecord rec;
      rec.features.assign(f.begin(), f.end());
      rec.class_name = flows.labels[i];
      rec.label = static_cast<nn::ClassIndex>(
          std::find(ds.class_names.begin(), ds.class_names.end(), rec.class_name) - ds.class_names.begin());
      ds.records.push_back(std::move(rec));
    }
    spdlog::info("assembled {} flows from {}", ds.size(), o.input);
  } else {
    flow::FlowCsvSchema schema;
    schema.label_column = o.label_column;
    schema.exclude_columns = o.exclude;
    auto loaded = flow::load_flow_csv(o.input, schema);
    ds = std::move(loaded.dataset);
    const auto& r = loaded.report;
    spdlog::info("read {} rows, dropped {} rows, {} constant and {} non-numeric columns", r.rows_read,
                 r.rows_dropped, r.dropped_constant_columns.size(), r.dropped_non_numeric_columns.size());
  }

  std::optional<flow::NormStats> stats;
  if (!o.stats_in.empty()) {
    std::ifstream in(o.stats_in);
    if (!in) {
      throw IoError("cannot read stats file '" + o.stats_in + "'");
    }
    try {
      stats = flow::NormStats::from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw SchemaError("bad stats file '" + o.stats_in + "': " + e.what());
    }
    if (!stats->feature_names.empty() && stats->feature_names != ds.feature_names) {
      throw SchemaError("stats file features do not match the input columns");
    }
    ds = flow::apply_normalization(ds, *stats);
  } else if (o.norm != "none") {
    auto [normed, fitted] = flow::normalize(ds, flow::parse_norm_method(o.norm));
    ds = std::move(normed);
    stats = std::move(fitted);
  }
  fs::path out = o.output;
  if (g.out_dir && out.is_relative()) {
    out = fs::path(*g.out_dir) / out;
  }
  flow::write_flow_csv(out, ds);
  if (stats && !o.stats_out.empty()) {
    write_text(o.stats_out, stats->to_json().dump(2) + "\n");
  }
  spdlog::info("wrote {} rows x {} features to {}", ds.size(), ds.width(), out.string());
  return 0;
}

int cmd_central(const GlobalOptions& g) {
  const auto cfg = load_config(g);
  const auto data = prepare(cfg);
  spdlog::info("centralized run: {} train / {} test records, {} tasks", data.train.size(), data.test.size(),
               data.schedule.size());
  cil::CentralizedTrainer trainer(data.init, cfg.central_config());
  const auto report = cil::run_cil(data.schedule, trainer, data.train, data.test, echo(cfg, "central"));
  write_report(cfg.out_dir, report, trainer.model());
  return 0;
}

int cmd_fed(const GlobalOptions& g, const FedOptions& o, const std::string& log_level) {
  const auto cfg = load_config(g);
  if (o.mode == "net") {
    return serve_federation(cfg, cfg.federated.listen, true, log_level);
  }
  const auto data = prepare(cfg);
  auto shards = make_shards(cfg, data.train);
  const auto fed = cfg.fed_config();
  spdlog::info("simulated federation: {} clients, {} rounds per task, {} tasks", fed.clients, fed.rounds,
               data.schedule.size());
  fed::SimulatedClients clients(std::move(shards), fed, cfg.local_training(), data.schedule.task_plan(fed.rounds));
  cil::FederatedTrainer trainer(data.init, fed, clients, cfg.local_training());
  const auto report = cil::run_cil(data.schedule, trainer, data.train, data.test, echo(cfg, "fed", "sim"));
  write_report(cfg.out_dir, report, trainer.model());
  write_text(fs::path(cfg.out_dir) / "rounds.json", history_json(trainer.history()).dump(2) + "\n");
  return 0;
}

int cmd_serve(const GlobalOptions& g, const ServeOptions& o) {
  const auto cfg = load_config(g);
  return serve_federation(cfg, o.listen.empty() ? cfg.federated.listen : o.listen, false, "info");
}

int cmd_client(const GlobalOptions&, const ClientOptions& o) {
  const fs::path shard = o.shard;
  const fs::path manifest = o.manifest.empty() ? shard.parent_path() / "manifest.json" : fs::path(o.manifest);
  auto setup = load_client(manifest, shard, o.client_id);
  const auto endpoint = net::Endpoint::parse(o.connect);
  fed::ClientRuntime runtime(setup.id, std::move(setup.shard), setup.fed, setup.training, std::move(setup.plan));
  spdlog::info("client {} joining {} with {} records", setup.id, endpoint.str(), runtime.state().shard.size());
  net::ClientOptions opts;
  opts.connect_timeout = std::chrono::milliseconds(o.connect_timeout_ms);
  const auto rounds = net::client_join(endpoint, runtime, opts);
  spdlog::info("client {} done after {} rounds", setup.id, rounds);
  return 0;
}

int cmd_report(const ReportOptions& o) {
  std::ifstream in(o.input);
  if (!in) {
    throw IoError("cannot read report '" + o.input + "'");
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("report '" + o.input + "' is not valid JSON: " + e.what());
  }
  const auto text = cil::report_csv(doc, o.full);
  if (o.output.empty() || o.output == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text(o.output, text);
  }
  return 0;
}

}  // namespace fcil::app
