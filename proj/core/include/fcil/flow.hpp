#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace fcil::flow {

/// IANA protocol number; values other than the named ones are "other".
enum class Protocol : std::uint8_t { kIcmp = 1, kTcp = 6, kUdp = 17 };

namespace tcp_flag {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
}  // namespace tcp_flag

struct PacketRecord {
  double timestamp = 0.0;
  std::string src_ip;
  std::string dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  Protocol protocol = Protocol::kTcp;
  std::uint32_t payload_bytes = 0;
  /// TCP flag bits; zero for other protocols.
  std::uint8_t header_flags = 0;
};

/// Five-tuple oriented from the flow initiator (sender of the first packet).
struct FlowKey {
  std::string src_ip;
  std::string dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  Protocol protocol = Protocol::kTcp;

  static FlowKey of(const PacketRecord& p);
  /// Direction-independent form: lower (ip, port) endpoint first.
  FlowKey canonical() const;
  auto tie() const { return std::tie(src_ip, src_port, dst_ip, dst_port, protocol); }
  bool operator==(const FlowKey& other) const { return tie() == other.tie(); }
  bool operator<(const FlowKey& other) const { return tie() < other.tie(); }
};

struct Flow {
  FlowKey key;
  std::vector<PacketRecord> packets;
  double first_timestamp = 0.0;
  double last_timestamp = 0.0;

  /// True when the packet travels initiator -> responder.
  bool is_forward(const PacketRecord& p) const;
};

inline constexpr double kDefaultIdleTimeout = 64.0;

/// Groups packets by bidirectional five-tuple; a gap strictly greater than
/// `idle_timeout` inside one key starts a new flow. Output is ordered by first
/// timestamp, then canonical key.
std::vector<Flow> assemble_flows(std::vector<PacketRecord> packets,
                                 double idle_timeout = kDefaultIdleTimeout);

/// Column names of the native feature vector, in order.
inline constexpr std::size_t kFeatureCount = 30;
const std::array<std::string_view, kFeatureCount>& feature_names();

/// Packet-, byte-, time- and protocol-based features of one flow. Rates over a
/// zero-length flow equal the raw totals.
std::array<double, kFeatureCount> featurize_flow(const Flow& flow);

struct PacketCsv {
  std::vector<PacketRecord> packets;
  /// Per-packet labels when the optional trailing `label` column is present.
  std::vector<std::string> labels;
};

/// Reads `ts,src_ip,dst_ip,src_port,dst_port,proto,bytes,tcp_flags[,label]`.
/// proto is TCP/UDP/ICMP or a protocol number; tcp_flags is a hex byte.
PacketCsv read_packet_csv(const std::filesystem::path& path);

struct LabelledFlows {
  std::vector<Flow> flows;
  /// Label of each flow's first packet; empty strings for unlabelled input.
  std::vector<std::string> labels;
};

/// assemble_flows over a packet CSV, carrying labels through.
LabelledFlows assemble_labelled_flows(PacketCsv input, double idle_timeout = kDefaultIdleTimeout);

}  // namespace fcil::flow
