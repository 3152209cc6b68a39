#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcil/nn.hpp"
#include "fcil/rng.hpp"

namespace fcil::flow {

inline constexpr std::string_view kBenign = "Benign";

struct FlowRecord {
  std::vector<double> features;
  nn::ClassIndex label = 0;
  std::string class_name;
};

enum class NormMethod { kMinMax, kZScore };

std::string_view to_string(NormMethod method);
NormMethod parse_norm_method(std::string_view name);

/// Per-feature (min, max) for minmax or (mean, std) for zscore.
struct NormStats {
  NormMethod method = NormMethod::kMinMax;
  std::vector<std::string> feature_names;
  std::vector<double> first;
  std::vector<double> second;

  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& doc);
};

struct Dataset {
  std::vector<FlowRecord> records;
  /// Index 0 is "Benign" whenever that class exists.
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;
  std::optional<NormStats> norm_stats;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t width() const { return feature_names.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  /// Samples per class index.
  std::vector<std::size_t> class_counts() const;
  /// Same class list and feature names, chosen records (in the given order).
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Records whose label is in `classes`, original order kept.
  Dataset filter_classes(std::span<const nn::ClassIndex> classes) const;

  nn::Batch to_batch() const;
  nn::Batch to_batch(std::span<const std::size_t> indices) const;

  /// Throws on label/width inconsistencies or non-finite values.
  void validate() const;
};

/// How to read a flow CSV.
struct FlowCsvSchema {
  std::string label_column = "label";
  /// Empty means every column except the label and excluded ones.
  std::vector<std::string> feature_columns;
  std::vector<std::string> exclude_columns;
  bool drop_constant_columns = true;
  /// Fixed class order; empty means Benign first, then the remaining names sorted.
  std::vector<std::string> class_names;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::vector<std::string> dropped_constant_columns;
  std::vector<std::string> dropped_non_numeric_columns;
};

struct LoadedDataset {
  Dataset dataset;
  LoadReport report;
};

/// Cleans while loading: rows with a missing or non-numeric feature are dropped,
/// columns with no numeric value at all are ignored, constant columns are dropped.
/// Throws IoError for a missing file and SchemaError for unknown columns or labels.
LoadedDataset load_flow_csv(const std::filesystem::path& path, const FlowCsvSchema& schema = {});

/// Header: feature names then `label`; values written so they read back exactly.
void write_flow_csv(const std::filesystem::path& path, const Dataset& dataset);

/// Fits statistics on `dataset` and transforms it. minmax maps every feature into [0, 1];
/// zscore uses a std floor of 1e-9. Throws InputError on an empty dataset.
std::pair<Dataset, NormStats> normalize(const Dataset& dataset, NormMethod method);

/// Transforms with previously fitted statistics (held-out data).
Dataset apply_normalization(const Dataset& dataset, const NormStats& stats);

struct PartitionScheme {
  enum class Kind { kIid, kDirichlet };
  Kind kind = Kind::kIid;
  double alpha = 0.5;

  static PartitionScheme iid() { return {}; }
  static PartitionScheme dirichlet(double alpha) { return {Kind::kDirichlet, alpha}; }
};

/// Disjoint, complete index shards. iid sizes differ by at most one; dirichlet
/// draws per-class client proportions (label skew) and may leave a shard empty.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& dataset, std::size_t clients,
                                                        const PartitionScheme& scheme, RngSeed seed);
std::vector<Dataset> partition(const Dataset& dataset, std::size_t clients,
                               const PartitionScheme& scheme, RngSeed seed);

/// Per-class split that keeps each class's share within one sample of `fractions`.
/// Each part preserves the original record order.
std::vector<Dataset> stratified_split(const Dataset& dataset, std::span<const double> fractions,
                                      RngSeed seed);

/// Integer counts summing to `total` with each within one of total * fractions[i].
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> fractions);

}  // namespace fcil::flow
