#include "fcil/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <set>
#include <utility>

#include "fcil/model_io.hpp"

namespace fcil::net {

namespace {

std::string sys_error(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(std::optional<Clock::time_point> deadline) {
  if (!deadline) {
    return -1;
  }
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
  return static_cast<int>(std::clamp<long long>(left, 0, 1 << 30));
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list != nullptr) {
      freeaddrinfo(list);
    }
  }
};

AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = passive ? AI_PASSIVE : 0;
  AddrInfo out;
  const auto port = std::to_string(ep.port);
  const int rc = getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &out.list);
  if (rc != 0) {
    throw NetworkError("cannot resolve '" + ep.host + "': " + gai_strerror(rc));
  }
  return out;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint ep;
  std::string_view host;
  std::string_view port;
  if (text.starts_with('[')) {
    const auto close = text.find(']');
    if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ':') {
      throw ConfigError("bad endpoint '" + std::string(text) + "'");
    }
    host = text.substr(1, close - 1);
    port = text.substr(close + 2);
  } else {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("endpoint '" + std::string(text) + "' must be host:port");
    }
    host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), ep.port);
  if (port.empty() || ec != std::errc{} || ptr != port.data() + port.size()) {
    throw ConfigError("bad port in endpoint '" + std::string(text) + "'");
  }
  ep.host = std::string(host);
  return ep;
}

std::string Endpoint::str() const {
  if (host.find(':') != std::string::npos) {
    return "[" + host + "]:" + std::to_string(port);
  }
  return host + ":" + std::to_string(port);
}

Connection::Connection(Connection&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Connection::~Connection() { close(); }

void Connection::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Connection Connection::connect(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
  const auto addrs = resolve(endpoint, false);
  std::string last_error = "no addresses";
  for (auto* ai = addrs.list; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      last_error = sys_error("socket");
      continue;
    }
    Connection conn(fd);
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (rc == 0) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        errno = err;
        last_error = sys_error("connect");
        continue;
      }
      rc = 0;
    }
    if (rc < 0) {
      last_error = sys_error("connect");
      continue;
    }
    ::fcntl(fd, F_SETFL, flags);
    set_nodelay(fd);
    return conn;
  }
  throw NetworkError("cannot connect to " + endpoint.str() + ": " + last_error);
}

void Connection::send_raw(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw NetworkError(sys_error("send"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Connection::send_frame(wire::MsgType type, std::span<const std::uint8_t> payload) {
  send_raw(wire::encode_frame(type, payload));
}

void Connection::send_error(std::uint16_t code, std::string_view message) noexcept {
  if (!is_open()) {
    return;
  }
  try {
    send_frame(wire::MsgType::kError, wire::encode(wire::ErrorMsg{code, std::string(message)}));
  } catch (...) {
  }
}

void Connection::read_exact(std::span<std::uint8_t> out, std::optional<Clock::time_point> deadline) {
  std::size_t got = 0;
  while (got < out.size()) {
    if (deadline) {
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc < 0) {
        if (errno == EINTR) {
          continue;
        }
        throw NetworkError(sys_error("poll"));
      }
      if (rc == 0) {
        throw TimeoutError("timed out waiting for peer");
      }
    }
    const auto n = ::recv(fd_, out.data() + got, out.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw NetworkError(sys_error("recv"));
    }
    if (n == 0) {
      throw NetworkError("connection closed by peer");
    }
    got += static_cast<std::size_t>(n);
  }
}

Connection::Frame Connection::recv_frame(std::optional<Clock::time_point> deadline) {
  std::array<std::uint8_t, wire::kHeaderSize> head{};
  read_exact(head, deadline);
  Frame frame;
  frame.header = wire::decode_header(head);
  frame.payload.resize(static_cast<std::size_t>(frame.header.length));
  read_exact(frame.payload, deadline);
  return frame;
}

ParameterServer::ParameterServer(const Endpoint& listen, ServerOptions options)
    : options_(options) {
  if (options_.expected_clients == 0) {
    throw ConfigError("server expects at least one client");
  }
  const auto addrs = resolve(listen, true);
  std::string last_error = "no addresses";
  for (auto* ai = addrs.list; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      last_error = sys_error("socket");
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) < 0 || ::listen(fd, 64) < 0) {
      last_error = sys_error("bind/listen");
      ::close(fd);
      continue;
    }
    sockaddr_storage bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port
                                              : reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    listen_fd_ = fd;
    return;
  }
  throw NetworkError("cannot listen on " + listen.str() + ": " + last_error);
}

ParameterServer::~ParameterServer() {
  clients_.clear();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
  }
}

void ParameterServer::handshake(Connection conn) {
  const auto deadline = Clock::now() + std::chrono::seconds(10);
  Connection::Frame frame;
  try {
    frame = conn.recv_frame(deadline);
  } catch (const ProtocolError& e) {
    conn.send_error(static_cast<std::uint16_t>(e.code()), e.what());
    return;
  } catch (const NetworkError&) {
    return;
  }
  if (!wire::is_known_type(frame.header.type)) {
    conn.send_error(wire::error_code::kUnknownType, "unknown message type");
    return;
  }
  if (frame.type() != wire::MsgType::kHello) {
    conn.send_error(wire::error_code::kUnexpected, "expected HELLO");
    return;
  }
  wire::Hello hello;
  try {
    hello = wire::decode_hello(frame.payload);
  } catch (const ProtocolError& e) {
    conn.send_error(static_cast<std::uint16_t>(e.code()), e.what());
    return;
  }
  if (hello.client_id >= options_.expected_clients || clients_.contains(hello.client_id)) {
    conn.send_error(wire::error_code::kRejected,
                    "client id " + std::to_string(hello.client_id) + " is invalid or taken");
    return;
  }
  if (hello.feature_width != options_.feature_width || hello.num_classes != options_.num_classes) {
    conn.send_error(wire::error_code::kRejected, "feature width / class count mismatch");
    return;
  }
  clients_.emplace(hello.client_id, std::move(conn));
}

std::size_t ParameterServer::accept_clients() {
  const auto deadline = Clock::now() + options_.join_timeout;
  while (clients_.size() < options_.expected_clients) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw NetworkError(sys_error("poll"));
    }
    if (rc == 0) {
      break;
    }
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      continue;
    }
    set_nodelay(fd);
    handshake(Connection(fd));
  }
  if (clients_.empty()) {
    throw NetworkError("no clients joined before the join timeout");
  }
  return clients_.size();
}

std::vector<fed::ClientId> ParameterServer::connected_clients() const {
  std::vector<fed::ClientId> out;
  for (const auto& [id, conn] : clients_) {
    out.push_back(id);
  }
  return out;
}

fed::RoundOutcome ParameterServer::run_round(std::uint32_t round, const nn::MlpModel& global,
                                             std::span<const fed::ClientId> selected) {
  fed::RoundOutcome outcome;
  const auto payload = wire::encode(wire::GlobalModel{round, global});
  std::set<fed::ClientId> pending;
  for (const auto id : selected) {
    auto it = clients_.find(id);
    if (it == clients_.end()) {
      outcome.dropped.push_back(id);
      continue;
    }
    try {
      it->second.send_frame(wire::MsgType::kGlobalModel, payload);
      pending.insert(id);
    } catch (const NetworkError&) {
      clients_.erase(it);
      outcome.dropped.push_back(id);
    }
  }

  const auto deadline = Clock::now() + options_.round_timeout;
  const auto drop = [&](fed::ClientId id, bool disconnect) {
    pending.erase(id);
    outcome.dropped.push_back(id);
    if (disconnect) {
      clients_.erase(id);
    }
  };

  while (!pending.empty()) {
    std::vector<pollfd> fds;
    std::vector<fed::ClientId> ids;
    for (const auto id : pending) {
      fds.push_back(pollfd{clients_.at(id).fd(), POLLIN, 0});
      ids.push_back(id);
    }
    const int rc = ::poll(fds.data(), fds.size(), remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw NetworkError(sys_error("poll"));
    }
    if (rc == 0) {
      break;
    }
    for (std::size_t i = 0; i < fds.size(); ++i) {
      if (fds[i].revents == 0) {
        continue;
      }
      const auto id = ids[i];
      auto& conn = clients_.at(id);
      Connection::Frame frame;
      try {
        frame = conn.recv_frame(deadline);
      } catch (const ProtocolError& e) {
        conn.send_error(static_cast<std::uint16_t>(e.code()), e.what());
        drop(id, true);
        continue;
      } catch (const NetworkError&) {
        // Timeout mid-frame leaves the stream unusable, same as a reset.
        drop(id, true);
        continue;
      }
      if (!wire::is_known_type(frame.header.type)) {
        conn.send_error(wire::error_code::kUnknownType, "unknown message type");
        drop(id, true);
        continue;
      }
      if (frame.type() != wire::MsgType::kClientUpdate) {
        if (frame.type() != wire::MsgType::kError) {
          conn.send_error(wire::error_code::kUnexpected, "expected CLIENT_UPDATE");
        }
        drop(id, true);
        continue;
      }
      try {
        auto msg = wire::decode_client_update(frame.payload);
        if (msg.round != round) {
          continue;  // late answer to an earlier round
        }
        fed::ClientUpdate update;
        update.client_id = id;
        update.round = msg.round;
        update.sample_count = msg.sample_count;
        update.weights = std::move(msg.model);
        if (update.weights.layer_dims != global.layer_dims ||
            update.weights.value_head.has_value() != global.value_head.has_value()) {
          conn.send_error(wire::error_code::kRejected, "update shape does not match global model");
          drop(id, true);
          continue;
        }
        outcome.updates.push_back(std::move(update));
        pending.erase(id);
      } catch (const ProtocolError& e) {
        conn.send_error(static_cast<std::uint16_t>(e.code()), e.what());
        drop(id, true);
      }
    }
  }
  for (const auto id : pending) {
    outcome.dropped.push_back(id);
  }

  const auto close_payload = wire::encode(wire::RoundClose{round});
  for (const auto id : selected) {
    auto it = clients_.find(id);
    if (it == clients_.end()) {
      continue;
    }
    try {
      it->second.send_frame(wire::MsgType::kRoundClose, close_payload);
    } catch (const NetworkError&) {
      clients_.erase(it);
    }
  }
  std::sort(outcome.updates.begin(), outcome.updates.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  std::sort(outcome.dropped.begin(), outcome.dropped.end());
  return outcome;
}

void ParameterServer::shutdown() noexcept {
  for (auto& [id, conn] : clients_) {
    try {
      conn.send_frame(wire::MsgType::kShutdown, wire::encode_shutdown());
    } catch (...) {
    }
  }
  clients_.clear();
}

std::size_t client_join(const Endpoint& server, fed::ClientRuntime& runtime,
                        const ClientOptions& options) {
  auto conn = Connection::connect(server, options.connect_timeout);
  const auto& shard = runtime.state().shard;
  conn.send_frame(wire::MsgType::kHello,
                  wire::encode(wire::Hello{runtime.id(), static_cast<std::uint32_t>(shard.width()),
                                           static_cast<std::uint32_t>(shard.num_classes())}));
  std::size_t rounds = 0;
  for (;;) {
    std::optional<Clock::time_point> deadline;
    if (options.idle_timeout.count() > 0) {
      deadline = Clock::now() + options.idle_timeout;
    }
    Connection::Frame frame;
    try {
      frame = conn.recv_frame(deadline);
    } catch (const ProtocolError& e) {
      conn.send_error(static_cast<std::uint16_t>(e.code()), e.what());
      throw;
    }
    if (!wire::is_known_type(frame.header.type)) {
      conn.send_error(wire::error_code::kUnknownType, "unknown message type");
      throw ProtocolError(wire::error_code::kUnknownType,
                          "server sent unknown message type " + std::to_string(frame.header.type));
    }
    switch (frame.type()) {
      case wire::MsgType::kGlobalModel: {
        auto msg = wire::decode_global_model(frame.payload);
        auto update = runtime.train(msg.round, msg.model);
        conn.send_frame(wire::MsgType::kClientUpdate,
                        wire::encode(wire::ClientUpdateMsg{msg.round, update.sample_count,
                                                           update.weights}));
        ++rounds;
        break;
      }
      case wire::MsgType::kRoundClose:
        wire::decode_round_close(frame.payload);
        break;
      case wire::MsgType::kShutdown:
        return rounds;
      case wire::MsgType::kError: {
        const auto err = wire::decode_error(frame.payload);
        throw ProtocolError(err.code, "server error: " + err.message);
      }
      default:
        conn.send_error(wire::error_code::kUnexpected, "unexpected message");
        throw ProtocolError(wire::error_code::kUnexpected,
                            "unexpected message type " + std::to_string(frame.header.type));
    }
  }
}

}  // namespace fcil::net
