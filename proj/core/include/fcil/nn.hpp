#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fcil/rng.hpp"

namespace fcil::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using ClassIndex = std::size_t;

/// Lower bound applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

/// Scalar linear head on the last hidden layer, V(h) = w.h + b.
struct ValueHead {
  RowVector weights;
  double bias = 0.0;
};

/// Dense ReLU classifier. weights[i] is layer_dims[i+1] x layer_dims[i];
/// the output layer is affine, softmax is applied by the losses.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::optional<ValueHead> value_head;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t hidden_width() const { return layer_dims[layer_dims.size() - 2]; }
  std::size_t parameter_count() const;

  /// Throws DimensionError on shape violations, NumericError on non-finite values.
  void validate() const;
};

/// True when dims, shapes and every parameter value compare equal.
bool identical(const MlpModel& a, const MlpModel& b);

/// Training batch; rows of `features` are samples.
struct Batch {
  Matrix features;
  std::vector<ClassIndex> labels;

  std::size_t size() const { return labels.size(); }
};

/// Shape-congruent with the model that produced it.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::optional<ValueHead> value_head;

  bool all_finite() const;
};

struct ForwardCache {
  /// activations[0] is the input; activations[i] is the ReLU output of hidden layer i.
  std::vector<Matrix> activations;
  std::vector<Matrix> pre_activations;
  Matrix logits;
  /// Present when the model has a value head.
  std::optional<Vector> values;
};

/// Glorot-uniform weights, zero biases. Throws ConfigError for fewer than two dims or a zero dim.
MlpModel mlp_init(std::span<const std::size_t> layer_dims, RngSeed seed, bool with_value_head = false);

ForwardCache forward(const MlpModel& model, const Matrix& features);

/// Argmax of the logits per row; ties resolve to the lowest class index.
std::vector<ClassIndex> predict(const MlpModel& model, const Matrix& features);

Vector softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

/// Mean of -log(max(p[label], floor)) over rows.
double cross_entropy(const Matrix& probs, std::span<const ClassIndex> labels);

/// sum_a p(a) log(p(a) / max(q(a), floor)); terms with p(a) == 0 contribute 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double l2_distance_sq(std::span<const double> a, std::span<const double> b);

enum class LossKind {
  kCrossEntropy,
  /// Cross-entropy on all rows plus policy/value cloning on the replay rows.
  kCrossEntropyCloning,
};

LossKind parse_loss_kind(std::string_view name);

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  double kl_weight = 0.0;
  double value_weight = 0.0;
};

/// Stored outputs for the replay rows of a batch.
struct CloningTargets {
  std::vector<std::size_t> rows;
  /// rows.size() x num_classes distributions recorded when the samples were stored.
  Matrix stored_probs;
  std::vector<double> stored_values;
};

struct LossBreakdown {
  double total = 0.0;
  double cross_entropy = 0.0;
  double policy_cloning = 0.0;
  double value_cloning = 0.0;
};

struct LossAndGradients {
  LossBreakdown loss;
  Gradients gradients;
};

LossBreakdown evaluate_loss(const MlpModel& model, const Batch& batch, const LossSpec& spec,
                            const CloningTargets* targets = nullptr);

/// Exact gradients of the composite loss described by `spec`.
LossAndGradients backward(const MlpModel& model, const Batch& batch, const LossSpec& spec,
                          const CloningTargets* targets = nullptr);

/// p <- p - lr * g for every parameter. lr == 0 is the identity.
MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double learning_rate);
void apply_sgd(MlpModel& model, const Gradients& grads, double learning_rate);

}  // namespace fcil::nn
