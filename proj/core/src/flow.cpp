#include "fcil/flow.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include "fcil/csv.hpp"
#include "fcil/errors.hpp"

namespace fcil::flow {

FlowKey FlowKey::of(const PacketRecord& p) {
  return FlowKey{p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol};
}

FlowKey FlowKey::canonical() const {
  if (std::tie(dst_ip, dst_port) < std::tie(src_ip, src_port)) {
    return FlowKey{dst_ip, src_ip, dst_port, src_port, protocol};
  }
  return *this;
}

bool Flow::is_forward(const PacketRecord& p) const {
  return p.src_ip == key.src_ip && p.src_port == key.src_port;
}

namespace {

struct Assembled {
  std::vector<Flow> flows;
  /// Input position of each flow's first packet.
  std::vector<std::size_t> first_index;
};

Assembled assemble(std::vector<PacketRecord> packets, double idle_timeout) {
  std::vector<std::size_t> order(packets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return packets[a].timestamp < packets[b].timestamp;
  });
  Assembled out;
  std::map<FlowKey, std::size_t> open;
  for (const auto idx : order) {
    auto& p = packets[idx];
    const auto canonical = FlowKey::of(p).canonical();
    auto it = open.find(canonical);
    if (it != open.end() && p.timestamp - out.flows[it->second].last_timestamp > idle_timeout) {
      open.erase(it);
      it = open.end();
    }
    if (it == open.end()) {
      Flow f;
      f.key = FlowKey::of(p);
      f.first_timestamp = p.timestamp;
      it = open.emplace(canonical, out.flows.size()).first;
      out.flows.push_back(std::move(f));
      out.first_index.push_back(idx);
    }
    Flow& flow = out.flows[it->second];
    flow.last_timestamp = p.timestamp;
    flow.packets.push_back(std::move(p));
  }
  std::vector<std::size_t> perm(out.flows.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    const Flow& fa = out.flows[a];
    const Flow& fb = out.flows[b];
    if (fa.first_timestamp != fb.first_timestamp) {
      return fa.first_timestamp < fb.first_timestamp;
    }
    return fa.key.canonical() < fb.key.canonical();
  });
  Assembled sorted;
  for (const auto i : perm) {
    sorted.flows.push_back(std::move(out.flows[i]));
    sorted.first_index.push_back(out.first_index[i]);
  }
  return sorted;
}

}  // namespace

std::vector<Flow> assemble_flows(std::vector<PacketRecord> packets, double idle_timeout) {
  return assemble(std::move(packets), idle_timeout).flows;
}

LabelledFlows assemble_labelled_flows(PacketCsv input, double idle_timeout) {
  if (!input.labels.empty() && input.labels.size() != input.packets.size()) {
    throw DimensionError("packet labels do not match packet count");
  }
  auto assembled = assemble(std::move(input.packets), idle_timeout);
  LabelledFlows out;
  out.flows = std::move(assembled.flows);
  for (const auto idx : assembled.first_index) {
    out.labels.push_back(input.labels.empty() ? std::string() : input.labels[idx]);
  }
  return out;
}

const std::array<std::string_view, kFeatureCount>& feature_names() {
  static constexpr std::array<std::string_view, kFeatureCount> names = {
      // packet-based
      "pkt_count_fwd", "pkt_count_bwd", "pkt_count_total", "pkts_per_sec", "bwd_fwd_pkt_ratio",
      // byte-based
      "byte_total_fwd", "byte_total_bwd", "byte_total", "bytes_per_sec", "pkt_size_mean",
      "pkt_size_min", "pkt_size_max", "pkt_size_std", "fwd_byte_share",
      // time-based
      "duration", "iat_mean", "iat_std", "iat_min", "iat_max", "fwd_iat_mean", "bwd_iat_mean",
      // protocol-based
      "proto_tcp", "proto_udp", "proto_icmp", "syn_count", "ack_count", "fin_count", "rst_count",
      "psh_count", "urg_count"};
  return names;
}

namespace {

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Population moments; all zero for an empty sample.
Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) {
    return m;
  }
  const double n = static_cast<double>(xs.size());
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (const double x : xs) {
    ss += (x - m.mean) * (x - m.mean);
  }
  m.stddev = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  m.min = *lo;
  m.max = *hi;
  return m;
}

std::vector<double> gaps(const std::vector<double>& times) {
  std::vector<double> out;
  for (std::size_t i = 1; i < times.size(); ++i) {
    out.push_back(times[i] - times[i - 1]);
  }
  return out;
}

}  // namespace

std::array<double, kFeatureCount> featurize_flow(const Flow& flow) {
  double fwd_pkts = 0.0;
  double bwd_pkts = 0.0;
  double fwd_bytes = 0.0;
  double bwd_bytes = 0.0;
  std::vector<double> sizes;
  std::vector<double> all_times;
  std::vector<double> fwd_times;
  std::vector<double> bwd_times;
  std::array<double, 6> flags{};  // SYN ACK FIN RST PSH URG
  for (const auto& p : flow.packets) {
    const double bytes = p.payload_bytes;
    sizes.push_back(bytes);
    all_times.push_back(p.timestamp);
    if (flow.is_forward(p)) {
      fwd_pkts += 1.0;
      fwd_bytes += bytes;
      fwd_times.push_back(p.timestamp);
    } else {
      bwd_pkts += 1.0;
      bwd_bytes += bytes;
      bwd_times.push_back(p.timestamp);
    }
    if (p.protocol == Protocol::kTcp) {
      const auto f = p.header_flags;
      flags[0] += (f & tcp_flag::kSyn) ? 1.0 : 0.0;
      flags[1] += (f & tcp_flag::kAck) ? 1.0 : 0.0;
      flags[2] += (f & tcp_flag::kFin) ? 1.0 : 0.0;
      flags[3] += (f & tcp_flag::kRst) ? 1.0 : 0.0;
      flags[4] += (f & tcp_flag::kPsh) ? 1.0 : 0.0;
      flags[5] += (f & tcp_flag::kUrg) ? 1.0 : 0.0;
    }
  }
  const double total_pkts = fwd_pkts + bwd_pkts;
  const double total_bytes = fwd_bytes + bwd_bytes;
  const double duration = flow.last_timestamp - flow.first_timestamp;
  const auto size_m = moments(sizes);
  const auto iat = moments(gaps(all_times));
  const auto fwd_iat = moments(gaps(fwd_times));
  const auto bwd_iat = moments(gaps(bwd_times));

  return {fwd_pkts,
          bwd_pkts,
          total_pkts,
          duration > 0.0 ? total_pkts / duration : total_pkts,
          fwd_pkts > 0.0 ? bwd_pkts / fwd_pkts : 0.0,
          fwd_bytes,
          bwd_bytes,
          total_bytes,
          duration > 0.0 ? total_bytes / duration : total_bytes,
          size_m.mean,
          size_m.min,
          size_m.max,
          size_m.stddev,
          total_bytes > 0.0 ? fwd_bytes / total_bytes : 0.0,
          duration,
          iat.mean,
          iat.stddev,
          iat.min,
          iat.max,
          fwd_iat.mean,
          bwd_iat.mean,
          flow.key.protocol == Protocol::kTcp ? 1.0 : 0.0,
          flow.key.protocol == Protocol::kUdp ? 1.0 : 0.0,
          flow.key.protocol == Protocol::kIcmp ? 1.0 : 0.0,
          flags[0],
          flags[1],
          flags[2],
          flags[3],
          flags[4],
          flags[5]};
}

namespace {

template <typename T>
T parse_int(std::string_view text, int base, std::string_view what, std::size_t line) {
  if (base == 16 && (text.starts_with("0x") || text.starts_with("0X"))) {
    text.remove_prefix(2);
  }
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, base);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw SchemaError("packet CSV line " + std::to_string(line) + ": bad " + std::string(what) +
                      " '" + std::string(text) + "'");
  }
  return value;
}

Protocol parse_protocol(std::string_view text, std::size_t line) {
  if (text == "TCP" || text == "tcp") {
    return Protocol::kTcp;
  }
  if (text == "UDP" || text == "udp") {
    return Protocol::kUdp;
  }
  if (text == "ICMP" || text == "icmp") {
    return Protocol::kIcmp;
  }
  return static_cast<Protocol>(parse_int<std::uint8_t>(text, 10, "proto", line));
}

}  // namespace

PacketCsv read_packet_csv(const std::filesystem::path& path) {
  static const std::vector<std::string> expected = {"ts",    "src_ip", "dst_ip", "src_port",
                                                    "dst_port", "proto", "bytes", "tcp_flags"};
  const auto table = csv::read_file(path);
  const bool labelled = table.header.size() == expected.size() + 1 && table.header.back() == "label";
  if (!std::equal(expected.begin(), expected.end(), table.header.begin(),
                  table.header.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(table.header.size(), expected.size()))) ||
      (table.header.size() != expected.size() && !labelled)) {
    throw SchemaError("packet CSV header must be ts,src_ip,dst_ip,src_port,dst_port,proto,bytes,tcp_flags[,label]");
  }
  PacketCsv out;
  std::size_t line = 1;
  for (const auto& row : table.rows) {
    ++line;
    if (row.size() != table.header.size()) {
      throw SchemaError("packet CSV line " + std::to_string(line) + " has " +
                        std::to_string(row.size()) + " fields");
    }
    PacketRecord p;
    const auto ts = csv::parse_number(row[0]);
    if (!ts) {
      throw SchemaError("packet CSV line " + std::to_string(line) + ": bad timestamp");
    }
    p.timestamp = *ts;
    p.src_ip = row[1];
    p.dst_ip = row[2];
    p.src_port = parse_int<std::uint16_t>(row[3], 10, "src_port", line);
    p.dst_port = parse_int<std::uint16_t>(row[4], 10, "dst_port", line);
    p.protocol = parse_protocol(row[5], line);
    p.payload_bytes = parse_int<std::uint32_t>(row[6], 10, "bytes", line);
    p.header_flags = parse_int<std::uint8_t>(row[7], 16, "tcp_flags", line);
    if (p.protocol == Protocol::kIcmp) {
      p.src_port = 0;
      p.dst_port = 0;
    }
    if (p.protocol != Protocol::kTcp) {
      p.header_flags = 0;
    }
    out.packets.push_back(std::move(p));
    if (labelled) {
      out.labels.push_back(row[8]);
    }
  }
  return out;
}

}  // namespace fcil::flow
