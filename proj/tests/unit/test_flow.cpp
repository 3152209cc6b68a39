#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fcil/csv.hpp"
#include "fcil/dataset.hpp"
#include "fcil/errors.hpp"
#include "fcil/flow.hpp"
#include "test_util.hpp"

using namespace fcil;
using namespace fcil::flow;
using fcil::testing::TempDir;

namespace {

PacketRecord pkt(double ts, std::string src, std::uint16_t sport, std::string dst, std::uint16_t dport,
                 Protocol proto, std::uint32_t bytes, std::uint8_t flags = 0) {
  return {ts, std::move(src), std::move(dst), sport, dport, proto, bytes, flags};
}

std::size_t feature_index(std::string_view name) {
  const auto& names = feature_names();
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

Dataset make_dataset(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels,
                     std::size_t classes) {
  Dataset d;
  for (std::size_t c = 0; c < classes; ++c) d.class_names.push_back(c == 0 ? "Benign" : "C" + std::to_string(c));
  for (std::size_t f = 0; f < rows.front().size(); ++f) d.feature_names.push_back("f" + std::to_string(f));
  for (std::size_t i = 0; i < rows.size(); ++i) d.records.push_back({rows[i], labels[i], d.class_names[labels[i]]});
  return d;
}

Dataset labelled_range(std::size_t n, std::size_t classes) {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back({static_cast<double>(i)});
    labels.push_back(i % classes);
  }
  return make_dataset(rows, labels, classes);
}

}  // namespace

TEST(Csv, ParsesQuotedFields) {
  const auto t = csv::parse("a,b,c\n1,\"x,y\",\"say \"\"hi\"\"\"\n2,\"multi\nline\",3\r\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x,y");
  EXPECT_EQ(t.rows[0][2], "say \"hi\"");
  EXPECT_EQ(t.rows[1][1], "multi\nline");
  EXPECT_EQ(t.rows[1][2], "3");
  EXPECT_EQ(t.column("c"), 2u);
  EXPECT_FALSE(t.column("z").has_value());
}

TEST(Csv, EscapeRoundTrips) {
  for (std::string s : {"plain", "a,b", "q\"q", "line\nbreak"}) {
    const auto t = csv::parse("h\n" + csv::escape(s) + "\n");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0][0], s);
  }
  EXPECT_EQ(csv::escape("plain"), "plain");
}

TEST(Csv, Numbers) {
  EXPECT_EQ(csv::parse_number(" 1.5 "), 1.5);
  EXPECT_FALSE(csv::parse_number("nan").has_value());
  EXPECT_FALSE(csv::parse_number("inf").has_value());
  EXPECT_FALSE(csv::parse_number("").has_value());
  EXPECT_FALSE(csv::parse_number("12abc").has_value());
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 0.0}) {
    EXPECT_EQ(csv::parse_number(csv::format_number(v)), v);
  }
}

TEST(Csv, MissingFile) { EXPECT_THROW(csv::read_file("/nonexistent/x.csv"), IoError); }

TEST(AssembleFlows, SinglePacket) {
  const auto flows = assemble_flows({pkt(1.0, "10.0.0.1", 5, "10.0.0.2", 53, Protocol::kUdp, 100)});
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows[0].packets.size(), 1u);
  EXPECT_EQ(flows[0].first_timestamp, 1.0);
  EXPECT_EQ(flows[0].last_timestamp, 1.0);
}

TEST(AssembleFlows, IdleTimeoutBoundary) {
  const auto a = pkt(0.0, "10.0.0.1", 5, "10.0.0.2", 53, Protocol::kUdp, 10);
  auto b = a;
  b.timestamp = 10.5;
  EXPECT_EQ(assemble_flows({a, b}, 10.0).size(), 2u);
  b.timestamp = 10.0;
  EXPECT_EQ(assemble_flows({a, b}, 10.0).size(), 1u);
}

TEST(AssembleFlows, InterleavedKeys) {
  // Three conversations, including reply packets, interleaved in time.
  std::vector<PacketRecord> packets = {
      pkt(0.0, "10.0.0.1", 1000, "10.0.0.9", 80, Protocol::kTcp, 0, 0x02),
      pkt(0.1, "10.0.0.2", 2000, "10.0.0.9", 53, Protocol::kUdp, 40),
      pkt(0.2, "10.0.0.9", 80, "10.0.0.1", 1000, Protocol::kTcp, 0, 0x12),
      pkt(0.3, "10.0.0.3", 0, "10.0.0.9", 0, Protocol::kIcmp, 64),
      pkt(0.4, "10.0.0.9", 53, "10.0.0.2", 2000, Protocol::kUdp, 120),
      pkt(0.5, "10.0.0.1", 1000, "10.0.0.9", 80, Protocol::kTcp, 0, 0x10),
      pkt(0.6, "10.0.0.9", 0, "10.0.0.3", 0, Protocol::kIcmp, 64),
      pkt(0.7, "10.0.0.3", 0, "10.0.0.9", 0, Protocol::kIcmp, 64),
      pkt(0.8, "10.0.0.1", 1000, "10.0.0.9", 80, Protocol::kTcp, 500, 0x18),
  };

  // Brute-force grouping by unordered endpoint pair plus protocol.
  std::map<std::tuple<std::string, std::string, int>, std::size_t> expected;
  for (const auto& p : packets) {
    auto a = p.src_ip + ":" + std::to_string(p.src_port);
    auto b = p.dst_ip + ":" + std::to_string(p.dst_port);
    if (b < a) std::swap(a, b);
    ++expected[{a, b, static_cast<int>(p.protocol)}];
  }

  auto shuffled = packets;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto flows = assemble_flows(shuffled);
  ASSERT_EQ(flows.size(), 3u);
  ASSERT_EQ(expected.size(), 3u);
  EXPECT_EQ(flows[0].packets.size(), 4u);
  EXPECT_EQ(flows[0].key.src_ip, "10.0.0.1");
  EXPECT_EQ(flows[1].packets.size(), 2u);
  EXPECT_EQ(flows[1].key.protocol, Protocol::kUdp);
  EXPECT_EQ(flows[2].packets.size(), 3u);
  std::multiset<std::size_t> got_sizes, want_sizes;
  for (const auto& f : flows) {
    got_sizes.insert(f.packets.size());
    for (std::size_t i = 1; i < f.packets.size(); ++i) {
      EXPECT_LE(f.packets[i - 1].timestamp, f.packets[i].timestamp);
    }
  }
  for (const auto& [k, n] : expected) want_sizes.insert(n);
  EXPECT_EQ(got_sizes, want_sizes);
}

TEST(Featurize, SingleUdpPacket) {
  const auto flows = assemble_flows({pkt(3.0, "10.0.0.1", 5, "10.0.0.2", 53, Protocol::kUdp, 100)});
  const auto f = featurize_flow(flows[0]);
  EXPECT_EQ(f[feature_index("duration")], 0.0);
  EXPECT_EQ(f[feature_index("pkt_count_total")], 1.0);
  EXPECT_EQ(f[feature_index("byte_total")], 100.0);
  EXPECT_EQ(f[feature_index("pkts_per_sec")], 1.0);
  EXPECT_EQ(f[feature_index("bytes_per_sec")], 100.0);
  EXPECT_EQ(f[feature_index("proto_udp")], 1.0);
  for (auto flag : {"syn_count", "ack_count", "fin_count", "rst_count", "psh_count", "urg_count"}) {
    EXPECT_EQ(f[feature_index(flag)], 0.0) << flag;
  }
}

TEST(Featurize, TwoPackets) {
  const auto flows = assemble_flows({pkt(0.0, "10.0.0.1", 5, "10.0.0.2", 53, Protocol::kUdp, 100),
                                     pkt(1.0, "10.0.0.1", 5, "10.0.0.2", 53, Protocol::kUdp, 100)});
  ASSERT_EQ(flows.size(), 1u);
  const auto f = featurize_flow(flows[0]);
  EXPECT_EQ(f[feature_index("duration")], 1.0);
  EXPECT_EQ(f[feature_index("bytes_per_sec")], 200.0);
  EXPECT_EQ(f[feature_index("iat_mean")], 1.0);
  EXPECT_EQ(f[feature_index("iat_std")], 0.0);
}

TEST(Featurize, FivePacketTcpHandComputed) {
  // SYN, SYN-ACK, PSH-ACK with 100 bytes, ACK with 300 bytes, FIN-ACK.
  const auto flows = assemble_flows({
      pkt(0.0, "10.0.0.1", 1234, "10.0.0.2", 80, Protocol::kTcp, 0, 0x02),
      pkt(0.5, "10.0.0.2", 80, "10.0.0.1", 1234, Protocol::kTcp, 0, 0x12),
      pkt(1.0, "10.0.0.1", 1234, "10.0.0.2", 80, Protocol::kTcp, 100, 0x18),
      pkt(2.0, "10.0.0.2", 80, "10.0.0.1", 1234, Protocol::kTcp, 300, 0x10),
      pkt(4.0, "10.0.0.1", 1234, "10.0.0.2", 80, Protocol::kTcp, 0, 0x11),
  });
  ASSERT_EQ(flows.size(), 1u);
  const auto f = featurize_flow(flows[0]);
  const std::map<std::string, double> want = {
      {"pkt_count_fwd", 3},      {"pkt_count_bwd", 2},     {"pkt_count_total", 5},
      {"pkts_per_sec", 1.25},    {"bwd_fwd_pkt_ratio", 2.0 / 3.0},
      {"byte_total_fwd", 100},   {"byte_total_bwd", 300},  {"byte_total", 400},
      {"bytes_per_sec", 100},    {"pkt_size_mean", 80},    {"pkt_size_min", 0},
      {"pkt_size_max", 300},     {"pkt_size_std", 116.61903789690601},
      {"fwd_byte_share", 0.25},  {"duration", 4},          {"iat_mean", 1},
      {"iat_std", 0.61237243569579447}, {"iat_min", 0.5},  {"iat_max", 2},
      {"fwd_iat_mean", 2},       {"bwd_iat_mean", 1.5},    {"proto_tcp", 1},
      {"proto_udp", 0},          {"proto_icmp", 0},        {"syn_count", 2},
      {"ack_count", 4},          {"fin_count", 1},         {"rst_count", 0},
      {"psh_count", 1},          {"urg_count", 0}};
  ASSERT_EQ(want.size(), kFeatureCount);
  for (const auto& [name, value] : want) {
    EXPECT_NEAR(f[feature_index(name)], value, 1e-9) << name;
  }
}

TEST(PacketCsv, ReadsLabelsAndFlags) {
  TempDir dir;
  const auto path = dir.write("p.csv",
                              "ts,src_ip,dst_ip,src_port,dst_port,proto,bytes,tcp_flags,label\n"
                              "0.0,10.0.0.1,10.0.0.2,1234,80,TCP,0,0x02,SYNScan\n"
                              "0.1,10.0.0.2,10.0.0.1,80,1234,6,0,12,SYNScan\n"
                              "0.2,10.0.0.3,10.0.0.2,0,0,ICMP,64,0,Benign\n");
  const auto input = read_packet_csv(path);
  ASSERT_EQ(input.packets.size(), 3u);
  EXPECT_EQ(input.packets[1].header_flags, 0x12);
  EXPECT_EQ(input.packets[2].protocol, Protocol::kIcmp);
  const auto flows = assemble_labelled_flows(input);
  ASSERT_EQ(flows.flows.size(), 2u);
  EXPECT_EQ(flows.labels, (std::vector<std::string>{"SYNScan", "Benign"}));

  const auto bad = dir.write("bad.csv", "ts,src,dst\n1,2,3\n");
  EXPECT_THROW(read_packet_csv(bad), SchemaError);
}

TEST(LoadFlowCsv, DropsNanRow) {
  TempDir dir;
  std::string text = "a,b,label\n";
  for (int i = 0; i < 10; ++i) {
    text += i == 4 ? "nan,NaN,Benign\n" : std::to_string(i) + "," + std::to_string(i * 2) + ",Benign\n";
  }
  const auto loaded = load_flow_csv(dir.write("f.csv", text));
  EXPECT_EQ(loaded.dataset.size(), 9u);
  EXPECT_EQ(loaded.report.rows_read, 10u);
  EXPECT_EQ(loaded.report.rows_dropped, 1u);
}

TEST(LoadFlowCsv, DropsConstantColumnAndOrdersClasses) {
  TempDir dir;
  const auto path = dir.write("f.csv",
                              "a,k,b,label\n"
                              "1,7,2,UDPFlood\n"
                              "2,7,3,Benign\n"
                              "3,7,5,HTTPFlood\n"
                              "4,7,1,Benign\n");
  const auto loaded = load_flow_csv(path);
  EXPECT_EQ(loaded.dataset.width(), 2u);
  EXPECT_EQ(loaded.dataset.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(loaded.report.dropped_constant_columns, (std::vector<std::string>{"k"}));
  EXPECT_EQ(loaded.dataset.class_names, (std::vector<std::string>{"Benign", "HTTPFlood", "UDPFlood"}));
  EXPECT_EQ(loaded.dataset.records[0].label, 2u);
  EXPECT_EQ(loaded.dataset.class_counts(), (std::vector<std::size_t>{2, 1, 1}));
}

TEST(LoadFlowCsv, Errors) {
  TempDir dir;
  EXPECT_THROW(load_flow_csv(dir.path() / "missing.csv"), IoError);
  const auto path = dir.write("f.csv", "a,label\n1,Benign\n2,DoS\n");
  FlowCsvSchema schema;
  schema.label_column = "Attack";
  EXPECT_THROW(load_flow_csv(path, schema), SchemaError);
  schema = {};
  schema.feature_columns = {"zzz"};
  EXPECT_THROW(load_flow_csv(path, schema), SchemaError);
  schema = {};
  schema.class_names = {"Benign"};
  EXPECT_THROW(load_flow_csv(path, schema), SchemaError);
}

TEST(LoadFlowCsv, WriteReadRoundTrip) {
  TempDir dir;
  auto d = make_dataset({{0.1, 1.0 / 3.0}, {2.5, -7.0}, {1e-9, 4.0}}, {0, 1, 1}, 2);
  write_flow_csv(dir.path() / "d.csv", d);
  FlowCsvSchema schema;
  schema.drop_constant_columns = false;
  const auto back = load_flow_csv(dir.path() / "d.csv", schema).dataset;
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.records[i].features, d.records[i].features);
    EXPECT_EQ(back.records[i].class_name, d.records[i].class_name);
  }
}

TEST(Normalize, MinMaxExamples) {
  const auto d = make_dataset({{0, 0}, {5, 0.25}, {10, 1}}, {0, 0, 0}, 1);
  const auto [out, stats] = normalize(d, NormMethod::kMinMax);
  EXPECT_EQ(out.records[0].features[0], 0.0);
  EXPECT_EQ(out.records[1].features[0], 0.5);
  EXPECT_EQ(out.records[2].features[0], 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.records[i].features[1], d.records[i].features[1]);
  EXPECT_EQ(stats.first, (std::vector<double>{0, 0}));
  EXPECT_EQ(stats.second, (std::vector<double>{10, 1}));
  ASSERT_TRUE(out.norm_stats.has_value());
  const auto [again, stats2] = normalize(out, NormMethod::kMinMax);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again.records[i].features, out.records[i].features);
}

TEST(Normalize, ZScoreMoments) {
  Rng rng(3);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 500; ++i) rows.push_back({rng.normal() * 7 + 3, rng.uniform(-100, 100), rng.gamma(2.0)});
  const auto d = make_dataset(rows, std::vector<std::size_t>(500, 0), 1);
  const auto [out, stats] = normalize(d, NormMethod::kZScore);
  for (std::size_t f = 0; f < 3; ++f) {
    double s = 0, sq = 0;
    for (const auto& r : out.records) s += r.features[f];
    const double mean = s / 500;
    for (const auto& r : out.records) sq += (r.features[f] - mean) * (r.features[f] - mean);
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_LT(std::abs(std::sqrt(sq / 500) - 1.0), 1e-6);
  }
  const auto held_out = apply_normalization(d, stats);
  for (std::size_t i = 0; i < 500; ++i) EXPECT_EQ(held_out.records[i].features, out.records[i].features);
}

TEST(Normalize, StatsJsonAndErrors) {
  const auto d = make_dataset({{1, 2}, {3, 5}}, {0, 0}, 1);
  const auto stats = normalize(d, NormMethod::kZScore).second;
  const auto back = NormStats::from_json(stats.to_json());
  EXPECT_EQ(back.first, stats.first);
  EXPECT_EQ(back.second, stats.second);
  EXPECT_EQ(back.method, NormMethod::kZScore);
  Dataset empty = d;
  empty.records.clear();
  EXPECT_THROW(normalize(empty, NormMethod::kMinMax), InputError);
  EXPECT_THROW(parse_norm_method("l2"), ConfigError);
}

TEST(Partition, SingleClientIsWholeDataset) {
  const auto d = labelled_range(10, 2);
  const auto shards = partition(d, 1, PartitionScheme::iid(), RngSeed{1});
  ASSERT_EQ(shards.size(), 1u);
  EXPECT_EQ(shards[0].size(), 10u);
}

TEST(Partition, IidSizes) {
  const auto d = labelled_range(10, 2);
  const auto shards = partition_indices(d, 4, PartitionScheme::iid(), RngSeed{1});
  std::vector<std::size_t> sizes;
  for (const auto& s : shards) sizes.push_back(s.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_THROW(partition_indices(d, 11, PartitionScheme::iid(), RngSeed{1}), InputError);
  EXPECT_THROW(partition_indices(d, 0, PartitionScheme::iid(), RngSeed{1}), InputError);
}

TEST(Partition, DirichletDisjointCompleteReproducible) {
  const auto d = labelled_range(400, 4);
  const auto a = partition_indices(d, 4, PartitionScheme::dirichlet(0.5), RngSeed{9});
  const auto b = partition_indices(d, 4, PartitionScheme::dirichlet(0.5), RngSeed{9});
  EXPECT_EQ(a, b);
  std::vector<int> seen(400, 0);
  for (const auto& shard : a) {
    for (auto i : shard) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_THROW(partition_indices(d, 4, PartitionScheme::dirichlet(0.0), RngSeed{9}), ConfigError);
}

TEST(StratifiedSplit, Examples) {
  const auto d = labelled_range(100, 2);
  const std::vector<double> all{1.0};
  const auto same = stratified_split(d, all, RngSeed{1});
  ASSERT_EQ(same.size(), 1u);
  EXPECT_EQ(same[0].size(), 100u);
  EXPECT_EQ(same[0].records[7].features, d.records[7].features);

  const std::vector<double> eighty{0.8, 0.2};
  const auto parts = stratified_split(d, eighty, RngSeed{1});
  EXPECT_EQ(parts[0].class_counts(), (std::vector<std::size_t>{40, 40}));
  EXPECT_EQ(parts[1].class_counts(), (std::vector<std::size_t>{10, 10}));
}

TEST(StratifiedSplit, TableShapedFractions) {
  // Class sizes shaped like the 5G-NIDD class distribution, scaled down.
  const std::vector<std::size_t> sizes{3929, 3761, 9, 250, 300, 1100, 130, 47, 474};
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      rows.push_back({static_cast<double>(rows.size())});
      labels.push_back(c);
    }
  }
  const auto d = make_dataset(rows, labels, sizes.size());
  const std::vector<double> fractions{0.7, 0.3};
  const auto parts = stratified_split(d, fractions, RngSeed{4});
  const auto train = parts[0].class_counts();
  const auto test = parts[1].class_counts();
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    EXPECT_LE(std::abs(static_cast<double>(train[c]) - 0.7 * static_cast<double>(sizes[c])), 1.0);
    EXPECT_EQ(train[c] + test[c], sizes[c]);
  }
}

TEST(Apportion, SumsAndBounds) {
  const std::vector<double> f{0.33, 0.33, 0.34};
  for (std::size_t total : {0u, 1u, 7u, 100u, 1001u}) {
    const auto counts = apportion(total, f);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      sum += counts[i];
      EXPECT_LE(std::abs(static_cast<double>(counts[i]) - f[i] * static_cast<double>(total)), 1.0);
    }
    EXPECT_EQ(sum, total);
  }
}
