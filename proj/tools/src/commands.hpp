#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fcil::app {

/// Flags shared by every subcommand; they override the config file.
struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

struct SynthOptions {
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t dim = 12;
  double separation = 4.0;
  std::size_t clusters = 1;
  std::string output;
};

struct PreprocessOptions {
  std::string input;
  bool packets = false;
  double idle_timeout = 64.0;
  std::string label_column = "label";
  std::vector<std::string> exclude;
  std::string norm = "minmax";
  std::string stats_in;
  std::string stats_out;
  std::string output;
};

struct FedOptions {
  std::string mode = "sim";
};

struct ServeOptions {
  std::string listen;
};

struct ClientOptions {
  std::string connect;
  std::string shard;
  std::string manifest;
  std::optional<std::uint64_t> client_id;
  std::int64_t connect_timeout_ms = 5000;
};

struct ReportOptions {
  std::string input;
  std::string output;
  bool full = false;
};

int cmd_synth(const GlobalOptions& g, const SynthOptions& o);
int cmd_preprocess(const GlobalOptions& g, const PreprocessOptions& o);
int cmd_central(const GlobalOptions& g);
int cmd_fed(const GlobalOptions& g, const FedOptions& o, const std::string& log_level);
int cmd_serve(const GlobalOptions& g, const ServeOptions& o);
int cmd_client(const GlobalOptions& g, const ClientOptions& o);
int cmd_report(const ReportOptions& o);

}  // namespace fcil::app
