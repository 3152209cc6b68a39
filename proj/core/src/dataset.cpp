#include "fcil/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "fcil/csv.hpp"
#include "fcil/errors.hpp"

namespace fcil::flow {

std::string_view to_string(NormMethod method) {
  return method == NormMethod::kMinMax ? "minmax" : "zscore";
}

NormMethod parse_norm_method(std::string_view name) {
  if (name == "minmax") {
    return NormMethod::kMinMax;
  }
  if (name == "zscore") {
    return NormMethod::kZScore;
  }
  throw ConfigError("unknown normalization '" + std::string(name) + "' (minmax|zscore)");
}

nlohmann::json NormStats::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  const bool minmax = method == NormMethod::kMinMax;
  for (std::size_t i = 0; i < first.size(); ++i) {
    nlohmann::json f;
    f["name"] = i < feature_names.size() ? feature_names[i] : "f" + std::to_string(i);
    f[minmax ? "min" : "mean"] = first[i];
    f[minmax ? "max" : "std"] = second[i];
    features.push_back(std::move(f));
  }
  return {{"method", std::string(to_string(method))}, {"features", std::move(features)}};
}

NormStats NormStats::from_json(const nlohmann::json& doc) {
  try {
    NormStats stats;
    stats.method = parse_norm_method(doc.at("method").get<std::string>());
    const bool minmax = stats.method == NormMethod::kMinMax;
    for (const auto& f : doc.at("features")) {
      stats.feature_names.push_back(f.at("name").get<std::string>());
      stats.first.push_back(f.at(minmax ? "min" : "mean").get<double>());
      stats.second.push_back(f.at(minmax ? "max" : "std").get<double>());
    }
    return stats;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed normalization stats: ") + e.what());
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& r : records) {
    if (r.label < counts.size()) {
      ++counts[r.label];
    }
  }
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_names = class_names;
  out.feature_names = feature_names;
  out.norm_stats = norm_stats;
  out.records.reserve(indices.size());
  for (const auto i : indices) {
    if (i >= records.size()) {
      throw IndexError("record index " + std::to_string(i) + " out of range");
    }
    out.records.push_back(records[i]);
  }
  return out;
}

Dataset Dataset::filter_classes(std::span<const nn::ClassIndex> classes) const {
  const std::set<nn::ClassIndex> keep(classes.begin(), classes.end());
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep.contains(records[i].label)) {
      indices.push_back(i);
    }
  }
  return subset(indices);
}

nn::Batch Dataset::to_batch() const {
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return to_batch(all);
}

nn::Batch Dataset::to_batch(std::span<const std::size_t> indices) const {
  nn::Batch batch;
  const auto dim = static_cast<Eigen::Index>(width());
  batch.features.resize(static_cast<Eigen::Index>(indices.size()), dim);
  batch.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& r = records.at(indices[k]);
    batch.features.row(static_cast<Eigen::Index>(k)) =
        Eigen::Map<const nn::RowVector>(r.features.data(), dim);
    batch.labels.push_back(r.label);
  }
  return batch;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.features.size() != width()) {
      throw DimensionError("record " + std::to_string(i) + " has " +
                           std::to_string(r.features.size()) + " features, dataset width is " +
                           std::to_string(width()));
    }
    if (r.label >= class_names.size()) {
      throw IndexError("record " + std::to_string(i) + " label out of range");
    }
    for (const double x : r.features) {
      if (!std::isfinite(x)) {
        throw NumericError("record " + std::to_string(i) + " has a non-finite feature");
      }
    }
  }
}

namespace {

std::vector<std::string> default_class_order(const std::set<std::string>& names) {
  std::vector<std::string> out;
  if (names.contains(std::string(kBenign))) {
    out.emplace_back(kBenign);
  }
  for (const auto& n : names) {
    if (n != kBenign) {
      out.push_back(n);
    }
  }
  return out;
}

}  // namespace

LoadedDataset load_flow_csv(const std::filesystem::path& path, const FlowCsvSchema& schema) {
  if (!std::filesystem::exists(path)) {
    throw IoError("flow CSV '" + path.string() + "' does not exist");
  }
  const auto table = csv::read_file(path);
  LoadedDataset out;
  out.report.rows_read = table.rows.size();

  const auto label_col = table.column(schema.label_column);
  if (!label_col) {
    throw SchemaError("label column '" + schema.label_column + "' not found in " + path.string());
  }
  for (const auto& name : schema.exclude_columns) {
    if (!table.column(name)) {
      throw SchemaError("excluded column '" + name + "' not found");
    }
  }

  std::vector<std::size_t> feature_cols;
  if (!schema.feature_columns.empty()) {
    for (const auto& name : schema.feature_columns) {
      const auto c = table.column(name);
      if (!c) {
        throw SchemaError("feature column '" + name + "' not found");
      }
      feature_cols.push_back(*c);
    }
  } else {
    const std::set<std::string> excluded(schema.exclude_columns.begin(),
                                         schema.exclude_columns.end());
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (c == *label_col || excluded.contains(table.header[c])) {
        continue;
      }
      const bool any_numeric = std::any_of(table.rows.begin(), table.rows.end(), [&](const auto& row) {
        return c < row.size() && csv::parse_number(row[c]).has_value();
      });
      if (any_numeric) {
        feature_cols.push_back(c);
      } else {
        out.report.dropped_non_numeric_columns.push_back(table.header[c]);
      }
    }
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size() || row[*label_col].empty()) {
      ++out.report.rows_dropped;
      continue;
    }
    std::vector<double> values;
    values.reserve(feature_cols.size());
    bool ok = true;
    for (const auto c : feature_cols) {
      const auto v = csv::parse_number(row[c]);
      if (!v) {
        ok = false;
        break;
      }
      values.push_back(*v);
    }
    if (!ok) {
      ++out.report.rows_dropped;
      continue;
    }
    rows.push_back(std::move(values));
    labels.push_back(row[*label_col]);
  }

  std::vector<bool> keep(feature_cols.size(), true);
  if (schema.drop_constant_columns && !rows.empty()) {
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const double v0 = rows.front()[j];
      const bool constant =
          std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r[j] == v0; });
      if (constant) {
        keep[j] = false;
        out.report.dropped_constant_columns.push_back(table.header[feature_cols[j]]);
      }
    }
  }

  Dataset& ds = out.dataset;
  for (std::size_t j = 0; j < feature_cols.size(); ++j) {
    if (keep[j]) {
      ds.feature_names.push_back(table.header[feature_cols[j]]);
    }
  }
  if (!schema.class_names.empty()) {
    ds.class_names = schema.class_names;
  } else {
    ds.class_names = default_class_order(std::set<std::string>(labels.begin(), labels.end()));
  }
  std::map<std::string, nn::ClassIndex> index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
    index.emplace(ds.class_names[i], i);
  }

  ds.records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto it = index.find(labels[i]);
    if (it == index.end()) {
      throw SchemaError("label '" + labels[i] + "' is not in the configured class list");
    }
    FlowRecord r;
    r.features.reserve(ds.feature_names.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      if (keep[j]) {
        r.features.push_back(rows[i][j]);
      }
    }
    r.label = it->second;
    r.class_name = labels[i];
    ds.records.push_back(std::move(r));
  }
  return out;
}

void write_flow_csv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write '" + path.string() + "'");
  }
  for (const auto& name : dataset.feature_names) {
    out << csv::escape(name) << ',';
  }
  out << "label\n";
  for (const auto& r : dataset.records) {
    for (const double x : r.features) {
      out << csv::format_number(x) << ',';
    }
    out << csv::escape(dataset.class_names.at(r.label)) << '\n';
  }
  if (!out) {
    throw IoError("failed writing '" + path.string() + "'");
  }
}

namespace {

inline constexpr double kStdFloor = 1e-9;

double transform(NormMethod method, double x, double first, double second) {
  if (method == NormMethod::kMinMax) {
    const double range = second - first;
    return range > 0.0 ? (x - first) / range : x - first;
  }
  return (x - first) / std::max(second, kStdFloor);
}

}  // namespace

Dataset apply_normalization(const Dataset& dataset, const NormStats& stats) {
  if (stats.first.size() != dataset.width() || stats.second.size() != dataset.width()) {
    throw DimensionError("normalization stats cover " + std::to_string(stats.first.size()) +
                         " features, dataset has " + std::to_string(dataset.width()));
  }
  Dataset out = dataset;
  for (auto& r : out.records) {
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      r.features[j] = transform(stats.method, r.features[j], stats.first[j], stats.second[j]);
    }
  }
  out.norm_stats = stats;
  return out;
}

std::pair<Dataset, NormStats> normalize(const Dataset& dataset, NormMethod method) {
  if (dataset.empty()) {
    throw InputError("cannot normalize an empty dataset");
  }
  const auto d = dataset.width();
  NormStats stats;
  stats.method = method;
  stats.feature_names = dataset.feature_names;
  stats.first.assign(d, 0.0);
  stats.second.assign(d, 0.0);
  if (method == NormMethod::kMinMax) {
    for (std::size_t j = 0; j < d; ++j) {
      double lo = dataset.records.front().features[j];
      double hi = lo;
      for (const auto& r : dataset.records) {
        lo = std::min(lo, r.features[j]);
        hi = std::max(hi, r.features[j]);
      }
      stats.first[j] = lo;
      stats.second[j] = hi;
    }
  } else {
    const double n = static_cast<double>(dataset.size());
    for (std::size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (const auto& r : dataset.records) {
        sum += r.features[j];
      }
      const double mean = sum / n;
      double ss = 0.0;
      for (const auto& r : dataset.records) {
        ss += (r.features[j] - mean) * (r.features[j] - mean);
      }
      stats.first[j] = mean;
      stats.second[j] = std::sqrt(ss / n);
    }
  }
  return {apply_normalization(dataset, stats), stats};
}

std::vector<std::size_t> apportion(std::size_t total, std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned) {
    ++counts[remainders[k].second];
  }
  return counts;
}

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& dataset, std::size_t clients,
                                                        const PartitionScheme& scheme, RngSeed seed) {
  if (clients == 0) {
    throw InputError("partition needs at least one client");
  }
  if (clients > dataset.size()) {
    throw InputError("cannot split " + std::to_string(dataset.size()) + " records across " +
                     std::to_string(clients) + " clients");
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> shards(clients);
  if (scheme.kind == PartitionScheme::Kind::kIid) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    const auto base = dataset.size() / clients;
    const auto extra = dataset.size() % clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      const auto n = base + (k < extra ? 1 : 0);
      shards[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
    }
    return shards;
  }

  if (!(scheme.alpha > 0.0)) {
    throw ConfigError("dirichlet alpha must be positive");
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[dataset.records[i].label].push_back(i);
  }
  for (auto& members : by_class) {
    if (members.empty()) {
      continue;
    }
    rng.shuffle(members);
    std::vector<double> share(clients);
    double total = 0.0;
    for (auto& s : share) {
      s = rng.gamma(scheme.alpha);
      total += s;
    }
    if (total > 0.0) {
      for (auto& s : share) {
        s /= total;
      }
    } else {
      std::fill(share.begin(), share.end(), 0.0);
      share[static_cast<std::size_t>(rng.below(clients))] = 1.0;
    }
    const auto counts = apportion(members.size(), share);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      shards[k].insert(shards[k].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                       members.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }
  for (auto& shard : shards) {
    std::sort(shard.begin(), shard.end());
  }
  return shards;
}

std::vector<Dataset> partition(const Dataset& dataset, std::size_t clients,
                               const PartitionScheme& scheme, RngSeed seed) {
  std::vector<Dataset> out;
  for (const auto& shard : partition_indices(dataset, clients, scheme, seed)) {
    out.push_back(dataset.subset(shard));
  }
  return out;
}

std::vector<Dataset> stratified_split(const Dataset& dataset, std::span<const double> fractions,
                                      RngSeed seed) {
  if (fractions.empty()) {
    throw ConfigError("stratified_split needs at least one fraction");
  }
  double sum = 0.0;
  for (const double f : fractions) {
    if (!(f >= 0.0)) {
      throw ConfigError("split fractions must be non-negative");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class.at(dataset.records[i].label).push_back(i);
  }
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto counts = apportion(members.size(), fractions);
    std::size_t pos = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      parts[p].insert(parts[p].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                      members.begin() + static_cast<std::ptrdiff_t>(pos + counts[p]));
      pos += counts[p];
    }
  }
  std::vector<Dataset> out;
  for (auto& part : parts) {
    std::sort(part.begin(), part.end());
    out.push_back(dataset.subset(part));
  }
  return out;
}

}  // namespace fcil::flow
