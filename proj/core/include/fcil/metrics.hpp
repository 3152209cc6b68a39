#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcil/nn.hpp"

namespace fcil::cil {

/// Square count matrix indexed [true][predicted].
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;

  explicit ConfusionMatrix(std::size_t num_classes = 0, std::vector<std::string> names = {});

  std::size_t num_classes() const { return counts.size(); }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t at(nn::ClassIndex truth, nn::ClassIndex predicted) const {
    return counts.at(truth).at(predicted);
  }
  std::uint64_t support(nn::ClassIndex truth) const;
  std::uint64_t predicted_count(nn::ClassIndex predicted) const;

  nlohmann::json to_json() const;
};

/// Throws DimensionError on length mismatch and IndexError for an index >= num_classes.
ConfusionMatrix confusion_matrix(std::span<const nn::ClassIndex> predictions,
                                 std::span<const nn::ClassIndex> truths, std::size_t num_classes,
                                 std::vector<std::string> class_names = {});

/// One-vs-rest counts and rates for a single class. Rates with a zero
/// denominator are reported as 0 and flagged.
struct ClassMetrics {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  double recall = 0.0;
  double precision = 0.0;
  double fpr = 0.0;
  double f1 = 0.0;
  bool recall_undefined = false;
  bool precision_undefined = false;
  bool fpr_undefined = false;

  std::uint64_t support() const { return tp + fn; }
  double accuracy() const;
};

ClassMetrics class_metrics(const ConfusionMatrix& cm, nn::ClassIndex positive);

struct MulticlassMetrics {
  double accuracy = 0.0;
  /// Unweighted mean over classes with nonzero support.
  double macro_recall = 0.0;
  /// Support-weighted mean recall; identical to accuracy.
  double weighted_recall = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Throws InputError on an empty (all-zero) matrix.
MulticlassMetrics derive_metrics(const ConfusionMatrix& cm);

/// 2x2 benign/malicious matrix. Class 0 is benign; every other class is an attack,
/// so one attack mistaken for another still counts as a detection.
ConfusionMatrix binary_collapse(const ConfusionMatrix& cm);
ConfusionMatrix binary_collapse(std::span<const nn::ClassIndex> predictions,
                                std::span<const nn::ClassIndex> truths);

/// Metrics of the malicious class (index 1) of a collapsed matrix.
ClassMetrics binary_metrics(const ConfusionMatrix& binary);

struct MetricsRow {
  double multiclass_accuracy = 0.0;
  double macro_recall = 0.0;
  double weighted_recall = 0.0;
  double binary_accuracy = 0.0;
  double binary_fpr = 0.0;
  double binary_precision = 0.0;
  double binary_recall = 0.0;
  double binary_f1 = 0.0;

  static constexpr std::size_t kFields = 8;
  /// Column headers used in CSV output.
  static const std::array<std::string_view, kFields>& headers();
  /// Keys used in JSON output.
  static const std::array<std::string_view, kFields>& keys();

  std::array<double, kFields> values() const;
  nlohmann::json to_json() const;
  static MetricsRow from_json(const nlohmann::json& doc);
};

MetricsRow metrics_row(const ConfusionMatrix& cm);

}  // namespace fcil::cil
