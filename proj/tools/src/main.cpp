#include <cstdio>
#include <exception>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "fcil/errors.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kNetwork = 3, kInternal = 4 };

void setup_logging(const std::string& level) {
  auto logger = spdlog::stderr_color_mt("fcil");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fcil::app;

  CLI::App app{"Class-incremental federated intrusion detection experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::string log_level = "info";
  app.add_option("--config", global.config, "Experiment config (JSON)");
  app.add_option("--seed", global.seed, "Root seed; overrides the config");
  app.add_option("--out-dir", global.out_dir, "Output directory; overrides the config");
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic Gaussian-cluster flow CSV");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes (Benign + attacks)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
  synth_cmd->add_option("--per-class", synth.per_class, "Samples per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dim", synth.dim, "Feature count")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--separation", synth.separation, "Distance scale between class centers")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--clusters", synth.clusters, "Clusters per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("-o,--output", synth.output, "Output CSV")->required();

  PreprocessOptions pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Clean and normalize a flow CSV, or featurize a packet CSV");
  pre_cmd->add_option("-i,--input", pre.input, "Input CSV")->required();
  pre_cmd->add_flag("--packets", pre.packets, "Input is a packet CSV to assemble into flows");
  pre_cmd->add_option("--idle-timeout", pre.idle_timeout, "Flow idle timeout in seconds")
      ->check(CLI::PositiveNumber);
  pre_cmd->add_option("--label-column", pre.label_column, "Label column of a flow CSV");
  pre_cmd->add_option("--exclude", pre.exclude, "Columns to drop")->delimiter(',');
  pre_cmd->add_option("--norm", pre.norm, "minmax|zscore|none")->check(CLI::IsMember({"minmax", "zscore", "none"}));
  pre_cmd->add_option("--stats-in", pre.stats_in, "Apply stored normalization stats instead of fitting");
  pre_cmd->add_option("--stats-out", pre.stats_out, "Write the fitted normalization stats");
  pre_cmd->add_option("-o,--output", pre.output, "Output flow CSV")->required();

  auto* central_cmd = app.add_subcommand("central", "Centralized class-incremental run");

  FedOptions fed;
  auto* fed_cmd = app.add_subcommand("fed", "Federated class-incremental run");
  fed_cmd->add_option("--mode", fed.mode, "sim (in-process clients) or net (loopback client processes)")
      ->check(CLI::IsMember({"sim", "net"}));

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the parameter server for external clients");
  serve_cmd->add_option("--listen", serve.listen, "host:port; overrides federated.listen");

  ClientOptions client;
  auto* client_cmd = app.add_subcommand("client", "Join a parameter server with one data shard");
  client_cmd->add_option("--connect", client.connect, "Server host:port")->required();
  client_cmd->add_option("--shard", client.shard, "Shard CSV written by the server")->required();
  client_cmd->add_option("--manifest", client.manifest, "Manifest (default: manifest.json next to the shard)");
  client_cmd->add_option("--client-id", client.client_id, "Client id (default: looked up by shard name)");
  client_cmd->add_option("--connect-timeout-ms", client.connect_timeout_ms, "Connect timeout")
      ->check(CLI::PositiveNumber);

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Re-render the per-task CSV from a JSON report");
  report_cmd->add_option("-i,--input", report.input, "report.json")->required();
  report_cmd->add_option("-o,--output", report.output, "Output CSV")->required();
  report_cmd->add_flag("--full", report.full, "Use the whole-test-set metrics instead of the cumulative ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  setup_logging(log_level);
  try {
    if (*synth_cmd) return cmd_synth(global, synth);
    if (*pre_cmd) return cmd_preprocess(global, pre);
    if (*central_cmd) return cmd_central(global);
    if (*fed_cmd) return cmd_fed(global, fed, log_level);
    if (*serve_cmd) return cmd_serve(global, serve);
    if (*client_cmd) return cmd_client(global, client);
    if (*report_cmd) return cmd_report(report);
  } catch (const fcil::NetworkError& e) {
    spdlog::error("network: {}", e.what());
    return kNetwork;
  } catch (const fcil::ProtocolError& e) {
    spdlog::error("protocol error {}: {}", e.code(), e.what());
    return kNetwork;
  } catch (const fcil::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kUsage;
  } catch (const fcil::IoError& e) {
    spdlog::error("io: {}", e.what());
    return kUsage;
  } catch (const fcil::SchemaError& e) {
    spdlog::error("schema: {}", e.what());
    return kUsage;
  } catch (const fcil::InputError& e) {
    spdlog::error("input: {}", e.what());
    return kUsage;
  } catch (const fcil::DimensionError& e) {
    spdlog::error("data: {}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::critical("internal error: {}", e.what());
    return kInternal;
  }
  return kOk;
}
