#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcil/errors.hpp"
#include "fcil/fed.hpp"
#include "fcil/wire.hpp"

namespace fcil::net {

using Clock = std::chrono::steady_clock;

class TimeoutError : public NetworkError {
 public:
  using NetworkError::NetworkError;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// "host:port" or "[v6]:port". Throws ConfigError.
  static Endpoint parse(std::string_view text);
  std::string str() const;
};

/// Owns one connected TCP socket and speaks framed messages over it.
class Connection {
 public:
  struct Frame {
    wire::FrameHeader header;
    std::vector<std::uint8_t> payload;

    wire::MsgType type() const { return static_cast<wire::MsgType>(header.type); }
  };

  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  /// Throws NetworkError when the peer refuses or the timeout passes.
  static Connection connect(const Endpoint& endpoint, std::chrono::milliseconds timeout);

  void send_frame(wire::MsgType type, std::span<const std::uint8_t> payload);
  void send_raw(std::span<const std::uint8_t> bytes);
  /// Best effort ERROR frame; never throws.
  void send_error(std::uint16_t code, std::string_view message) noexcept;

  /// Reads one frame. Throws NetworkError on EOF/reset, TimeoutError past the
  /// deadline, ProtocolError for a bad header.
  Frame recv_frame(std::optional<Clock::time_point> deadline = std::nullopt);

  bool is_open() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close() noexcept;

 private:
  void read_exact(std::span<std::uint8_t> out, std::optional<Clock::time_point> deadline);
  int fd_ = -1;
};

struct ServerOptions {
  std::size_t expected_clients = 1;
  std::uint32_t feature_width = 0;
  std::uint32_t num_classes = 0;
  std::chrono::milliseconds join_timeout{60000};
  std::chrono::milliseconds round_timeout{30000};
};

/// Parameter-server side of the protocol. Each round sends GLOBAL_MODEL to the
/// selected clients, waits for CLIENT_UPDATE until the round timeout (late or
/// silent clients are dropped for that round) and closes with ROUND_CLOSE.
class ParameterServer final : public fed::RoundExecutor {
 public:
  ParameterServer(const Endpoint& listen, ServerOptions options);
  ~ParameterServer() override;
  ParameterServer(const ParameterServer&) = delete;
  ParameterServer& operator=(const ParameterServer&) = delete;

  std::uint16_t port() const { return port_; }

  /// Waits for HELLO from every expected client or until the join timeout.
  /// Returns how many joined; throws NetworkError when none did.
  std::size_t accept_clients();

  fed::RoundOutcome run_round(std::uint32_t round, const nn::MlpModel& global,
                              std::span<const fed::ClientId> selected) override;

  /// Sends SHUTDOWN to every connected client and closes the connections.
  void shutdown() noexcept;

  std::vector<fed::ClientId> connected_clients() const;

 private:
  void handshake(Connection conn);

  ServerOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::map<fed::ClientId, Connection> clients_;
};

struct ClientOptions {
  std::chrono::milliseconds connect_timeout{5000};
  /// Zero waits indefinitely for the next server message.
  std::chrono::milliseconds idle_timeout{0};
};

/// Runs the client loop: HELLO, then train on every GLOBAL_MODEL until SHUTDOWN.
/// Returns the number of rounds trained.
std::size_t client_join(const Endpoint& server, fed::ClientRuntime& runtime,
                        const ClientOptions& options = {});

}  // namespace fcil::net
