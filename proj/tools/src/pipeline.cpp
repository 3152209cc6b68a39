#include "pipeline.hpp"

#include <fstream>

#include "fcil/errors.hpp"

namespace fcil::app {

using nlohmann::json;

PreparedData prepare(const ExperimentConfig& cfg) {
  PreparedData out;
  flow::Dataset train;
  std::optional<flow::Dataset> test;
  if (cfg.data.synthetic) {
    auto spec = *cfg.data.synthetic;
    spec.seed = stream_seed(cfg.seed, "synthetic");
    train = cil::generate_synthetic(spec);
  } else {
    flow::FlowCsvSchema schema;
    schema.label_column = cfg.data.label_column;
    schema.exclude_columns = cfg.data.exclude_columns;
    schema.class_names = cfg.data.classes;
    train = flow::load_flow_csv(*cfg.data.train, schema).dataset;
    if (cfg.data.test) {
      schema.class_names = train.class_names;
      schema.feature_columns = train.feature_names;
      schema.drop_constant_columns = false;
      test = flow::load_flow_csv(*cfg.data.test, schema).dataset;
    }
  }
  if (train.empty()) {
    throw InputError("training data is empty");
  }
  if (!test) {
    const double fractions[] = {1.0 - cfg.data.test_fraction, cfg.data.test_fraction};
    auto parts = flow::stratified_split(train, fractions, stream_seed(cfg.seed, "split"));
    train = std::move(parts[0]);
    test = std::move(parts[1]);
  }
  if (cfg.data.normalization != "none") {
    auto [normed, stats] = flow::normalize(train, flow::parse_norm_method(cfg.data.normalization));
    out.train = std::move(normed);
    out.test = flow::apply_normalization(*test, stats);
  } else {
    out.train = std::move(train);
    out.test = std::move(*test);
  }

  auto counts = out.train.class_counts();
  const auto test_counts = out.test.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    counts[c] += test_counts.at(c);
  }
  out.schedule = cil::build_schedule(out.train.class_names, cfg.schedule_order(), counts);

  std::vector<std::size_t> dims{out.train.width()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(out.train.num_classes());
  out.init = nn::mlp_init(dims, stream_seed(cfg.seed, "init"), cfg.clear.value_head);
  return out;
}

std::vector<flow::Dataset> make_shards(const ExperimentConfig& cfg, const flow::Dataset& train) {
  const auto scheme = cfg.federated.partition == "dirichlet"
                          ? flow::PartitionScheme::dirichlet(cfg.federated.dirichlet_alpha)
                          : flow::PartitionScheme::iid();
  return flow::partition(train, cfg.federated.clients, scheme, stream_seed(cfg.seed, "partition"));
}

json client_manifest(const ExperimentConfig& cfg, const PreparedData& data,
                     const std::vector<flow::Dataset>& shards) {
  const auto fed = cfg.fed_config();
  json m;
  m["class_names"] = data.train.class_names;
  m["feature_names"] = data.train.feature_names;
  m["schedule"] = data.schedule.to_json();
  m["federated"] = {{"clients", fed.clients},
                    {"participation", fed.participation},
                    {"batch_size", fed.batch_size},
                    {"local_iterations", fed.local_iterations ? json(*fed.local_iterations) : json(nullptr)},
                    {"epochs", fed.epochs ? json(*fed.epochs) : json(nullptr)},
                    {"learning_rate", fed.learning_rate},
                    {"rounds_per_task", fed.rounds},
                    {"seed", fed.seed.value},
                    {"f32_boundary", fed.f32_boundary}};
  m["training"] = {{"mode", std::string(fed::to_string(cfg.train.mode))},
                   {"replay_fraction", cfg.clear.replay_fraction},
                   {"kl_weight", cfg.clear.kl_weight},
                   {"value_weight", cfg.clear.value_weight},
                   {"buffer_capacity", cfg.clear.buffer_capacity},
                   {"value_head", cfg.clear.value_head}};
  json list = json::array();
  for (std::size_t k = 0; k < shards.size(); ++k) {
    list.push_back({{"client_id", k}, {"file", "client_" + std::to_string(k) + ".csv"},
                    {"samples", shards[k].size()}});
  }
  m["shards"] = list;
  return m;
}

std::filesystem::path write_shards(const std::filesystem::path& dir, const json& manifest,
                                   const std::vector<flow::Dataset>& shards) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  }
  for (std::size_t k = 0; k < shards.size(); ++k) {
    flow::write_flow_csv(dir / manifest["shards"][k]["file"].get<std::string>(), shards[k]);
  }
  const auto path = dir / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  return path;
}

ClientSetup load_client(const std::filesystem::path& manifest_path, const std::filesystem::path& shard_path,
                        std::optional<fed::ClientId> id) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw IoError("cannot read manifest '" + manifest_path.string() + "'");
  }
  ClientSetup setup;
  try {
    const auto m = json::parse(in);
    if (!id) {
      const auto name = shard_path.filename().string();
      for (const auto& s : m.at("shards")) {
        if (s.at("file").get<std::string>() == name) {
          id = s.at("client_id").get<fed::ClientId>();
        }
      }
      if (!id) {
        throw ConfigError("shard '" + name + "' is not listed in the manifest; pass --client-id");
      }
    }
    setup.id = *id;
    const auto& f = m.at("federated");
    setup.fed.clients = f.at("clients").get<std::size_t>();
    setup.fed.participation = f.at("participation").get<double>();
    setup.fed.batch_size = f.at("batch_size").get<std::size_t>();
    setup.fed.local_iterations = f.at("local_iterations").is_null()
                                     ? std::nullopt
                                     : std::optional<std::size_t>(f.at("local_iterations").get<std::size_t>());
    setup.fed.epochs = f.at("epochs").is_null() ? std::nullopt
                                                : std::optional<std::size_t>(f.at("epochs").get<std::size_t>());
    setup.fed.learning_rate = f.at("learning_rate").get<double>();
    setup.fed.rounds = f.at("rounds_per_task").get<std::size_t>();
    setup.fed.seed = RngSeed{f.at("seed").get<std::uint64_t>()};
    setup.fed.f32_boundary = f.at("f32_boundary").get<bool>();
    const auto& t = m.at("training");
    setup.training.mode = fed::parse_train_mode(t.at("mode").get<std::string>());
    setup.training.clear.replay_fraction = t.at("replay_fraction").get<double>();
    setup.training.clear.kl_weight = t.at("kl_weight").get<double>();
    setup.training.clear.value_weight = t.at("value_weight").get<double>();
    setup.training.clear.buffer_capacity = t.at("buffer_capacity").get<std::size_t>();
    setup.training.clear.value_head = t.at("value_head").get<bool>();
    setup.plan = cil::TaskSchedule::from_json(m.at("schedule")).task_plan(setup.fed.rounds);

    flow::FlowCsvSchema schema;
    schema.class_names = m.at("class_names").get<std::vector<std::string>>();
    schema.feature_columns = m.at("feature_names").get<std::vector<std::string>>();
    schema.drop_constant_columns = false;
    setup.shard = flow::load_flow_csv(shard_path, schema).dataset;
  } catch (const json::exception& e) {
    throw SchemaError("bad manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (setup.id >= setup.fed.clients) {
    throw ConfigError("client id " + std::to_string(setup.id) + " is outside the federation");
  }
  return setup;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path.string() + "'");
  }
  out << text;
  if (!out) {
    throw IoError("write to '" + path.string() + "' failed");
  }
}

}  // namespace fcil::app
