#include "fcil/metrics.hpp"

#include <nlohmann/json.hpp>

#include "fcil/errors.hpp"

namespace fcil::cil {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::string> names)
    : class_names(std::move(names)), counts(num_classes, std::vector<std::uint64_t>(num_classes, 0)) {
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw DimensionError("confusion matrix has " + std::to_string(num_classes) + " classes but " +
                         std::to_string(class_names.size()) + " names");
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (const auto& row : counts) {
    for (const auto c : row) {
      sum += c;
    }
  }
  return sum;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    sum += counts[i][i];
  }
  return sum;
}

std::uint64_t ConfusionMatrix::support(nn::ClassIndex truth) const {
  std::uint64_t sum = 0;
  for (const auto c : counts.at(truth)) {
    sum += c;
  }
  return sum;
}

std::uint64_t ConfusionMatrix::predicted_count(nn::ClassIndex predicted) const {
  std::uint64_t sum = 0;
  for (const auto& row : counts) {
    sum += row.at(predicted);
  }
  return sum;
}

nlohmann::json ConfusionMatrix::to_json() const {
  return {{"class_names", class_names}, {"counts", counts}};
}

ConfusionMatrix confusion_matrix(std::span<const nn::ClassIndex> predictions,
                                 std::span<const nn::ClassIndex> truths, std::size_t num_classes,
                                 std::vector<std::string> class_names) {
  if (predictions.size() != truths.size()) {
    throw DimensionError("got " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(truths.size()) + " labels");
  }
  ConfusionMatrix cm(num_classes, std::move(class_names));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= num_classes || predictions[i] >= num_classes) {
      throw IndexError("class index out of range at position " + std::to_string(i));
    }
    ++cm.counts[truths[i]][predictions[i]];
  }
  return cm;
}

double ClassMetrics::accuracy() const {
  const auto all = tp + fp + fn + tn;
  return all == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(all);
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, nn::ClassIndex positive) {
  if (positive >= cm.num_classes()) {
    throw IndexError("class " + std::to_string(positive) + " out of range");
  }
  ClassMetrics m;
  m.tp = cm.at(positive, positive);
  m.fn = cm.support(positive) - m.tp;
  m.fp = cm.predicted_count(positive) - m.tp;
  m.tn = cm.total() - m.tp - m.fn - m.fp;
  m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
  m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
  m.fpr = ratio(m.fp, m.fp + m.tn, m.fpr_undefined);
  const double pr = m.precision + m.recall;
  m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
  return m;
}

MulticlassMetrics derive_metrics(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) {
    throw InputError("confusion matrix is empty");
  }
  MulticlassMetrics out;
  out.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double macro = 0.0;
  std::size_t present = 0;
  std::uint64_t weighted_tp = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    auto m = class_metrics(cm, c);
    if (!m.recall_undefined) {
      macro += m.recall;
      ++present;
    }
    // support * recall == tp, summed in integers so the identity with accuracy is exact
    weighted_tp += m.tp;
    out.per_class.push_back(m);
  }
  out.macro_recall = present == 0 ? 0.0 : macro / static_cast<double>(present);
  out.weighted_recall = static_cast<double>(weighted_tp) / static_cast<double>(total);
  return out;
}

ConfusionMatrix binary_collapse(const ConfusionMatrix& cm) {
  ConfusionMatrix out(2, {"Benign", "Malicious"});
  for (std::size_t t = 0; t < cm.num_classes(); ++t) {
    for (std::size_t p = 0; p < cm.num_classes(); ++p) {
      out.counts[t == 0 ? 0 : 1][p == 0 ? 0 : 1] += cm.counts[t][p];
    }
  }
  return out;
}

ConfusionMatrix binary_collapse(std::span<const nn::ClassIndex> predictions,
                                std::span<const nn::ClassIndex> truths) {
  if (predictions.size() != truths.size()) {
    throw DimensionError("prediction and label counts differ");
  }
  std::vector<nn::ClassIndex> p(predictions.size());
  std::vector<nn::ClassIndex> t(truths.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = predictions[i] == 0 ? 0 : 1;
    t[i] = truths[i] == 0 ? 0 : 1;
  }
  return confusion_matrix(p, t, 2, {"Benign", "Malicious"});
}

ClassMetrics binary_metrics(const ConfusionMatrix& binary) {
  if (binary.num_classes() != 2) {
    throw DimensionError("binary metrics need a 2x2 matrix");
  }
  return class_metrics(binary, 1);
}

const std::array<std::string_view, MetricsRow::kFields>& MetricsRow::headers() {
  static const std::array<std::string_view, kFields> h = {
      "Multiclass Acc.", "Macro Recall",     "Weighted Recall", "Binary Acc.",
      "Binary FPR",      "Binary Precision", "Binary Recall",   "Binary F1-Score"};
  return h;
}

const std::array<std::string_view, MetricsRow::kFields>& MetricsRow::keys() {
  static const std::array<std::string_view, kFields> k = {
      "multiclass_accuracy", "macro_recall",     "weighted_recall", "binary_accuracy",
      "binary_fpr",          "binary_precision", "binary_recall",   "binary_f1"};
  return k;
}

std::array<double, MetricsRow::kFields> MetricsRow::values() const {
  return {multiclass_accuracy, macro_recall,     weighted_recall, binary_accuracy,
          binary_fpr,          binary_precision, binary_recall,   binary_f1};
}

nlohmann::json MetricsRow::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  const auto v = values();
  for (std::size_t i = 0; i < kFields; ++i) {
    doc[std::string(keys()[i])] = v[i];
  }
  return doc;
}

MetricsRow MetricsRow::from_json(const nlohmann::json& doc) {
  MetricsRow row;
  double* fields[kFields] = {&row.multiclass_accuracy, &row.macro_recall,     &row.weighted_recall,
                             &row.binary_accuracy,     &row.binary_fpr,       &row.binary_precision,
                             &row.binary_recall,       &row.binary_f1};
  try {
    for (std::size_t i = 0; i < kFields; ++i) {
      *fields[i] = doc.at(std::string(keys()[i])).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad metrics row: ") + e.what());
  }
  return row;
}

MetricsRow metrics_row(const ConfusionMatrix& cm) {
  const auto multi = derive_metrics(cm);
  const auto bin = binary_metrics(binary_collapse(cm));
  MetricsRow row;
  row.multiclass_accuracy = multi.accuracy;
  row.macro_recall = multi.macro_recall;
  row.weighted_recall = multi.weighted_recall;
  row.binary_accuracy = bin.accuracy();
  row.binary_fpr = bin.fpr;
  row.binary_precision = bin.precision;
  row.binary_recall = bin.recall;
  row.binary_f1 = bin.f1;
  return row;
}

}  // namespace fcil::cil
