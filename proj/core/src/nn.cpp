#include "fcil/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fcil/errors.hpp"

namespace fcil::nn {

namespace {

bool finite(const Matrix& m) { return m.allFinite(); }

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void check_batch(const MlpModel& model, const Batch& batch) {
  if (static_cast<std::size_t>(batch.features.cols()) != model.input_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.features.cols()) +
                         " features, model expects " + std::to_string(model.input_dim()));
  }
  if (static_cast<std::size_t>(batch.features.rows()) != batch.labels.size()) {
    throw DimensionError("batch has " + std::to_string(batch.features.rows()) + " rows but " +
                         std::to_string(batch.labels.size()) + " labels");
  }
  for (const auto label : batch.labels) {
    if (label >= model.output_dim()) {
      throw IndexError("label " + std::to_string(label) + " out of range for " +
                       std::to_string(model.output_dim()) + " classes");
    }
  }
}

void check_spec(const MlpModel& model, const Batch& batch, const LossSpec& spec,
                const CloningTargets* targets) {
  if (spec.kl_weight < 0.0 || spec.value_weight < 0.0 || !std::isfinite(spec.kl_weight) ||
      !std::isfinite(spec.value_weight)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
  if (spec.kind == LossKind::kCrossEntropy) {
    if (spec.kl_weight != 0.0 || spec.value_weight != 0.0) {
      throw ConfigError("cross-entropy loss spec cannot carry cloning weights");
    }
    return;
  }
  if (spec.kind != LossKind::kCrossEntropyCloning) {
    throw ConfigError("unknown loss spec");
  }
  if (spec.value_weight > 0.0 && !model.value_head) {
    throw ConfigError("value-cloning weight set but model has no value head");
  }
  if (targets == nullptr) {
    return;
  }
  const auto m = targets->rows.size();
  if (static_cast<std::size_t>(targets->stored_probs.rows()) != m ||
      (m > 0 && static_cast<std::size_t>(targets->stored_probs.cols()) != model.output_dim())) {
    throw DimensionError("stored_probs must be " + std::to_string(m) + "x" +
                         std::to_string(model.output_dim()));
  }
  if (spec.value_weight > 0.0 && targets->stored_values.size() != m) {
    throw DimensionError("stored_values must have one entry per replay row");
  }
  for (const auto r : targets->rows) {
    if (r >= batch.size()) {
      throw IndexError("replay row " + std::to_string(r) + " outside batch");
    }
  }
}

bool has_cloning(const LossSpec& spec, const CloningTargets* targets) {
  return spec.kind == LossKind::kCrossEntropyCloning && targets != nullptr &&
         !targets->rows.empty() && (spec.kl_weight > 0.0 || spec.value_weight > 0.0);
}

double row_kl(const Matrix& stored, Eigen::Index stored_row, const Matrix& probs,
              Eigen::Index row) {
  double sum = 0.0;
  for (Eigen::Index a = 0; a < probs.cols(); ++a) {
    const double p = stored(stored_row, a);
    if (p > 0.0) {
      sum += p * std::log(std::max(p, kLogFloor) / std::max(probs(row, a), kLogFloor));
    }
  }
  return sum;
}

LossBreakdown loss_from_forward(const ForwardCache& cache, const Matrix& probs,
                                const Batch& batch, const LossSpec& spec,
                                const CloningTargets* targets) {
  LossBreakdown out;
  out.cross_entropy = cross_entropy(probs, batch.labels);
  if (has_cloning(spec, targets)) {
    const auto m = static_cast<double>(targets->rows.size());
    if (spec.kl_weight > 0.0) {
      double kl = 0.0;
      for (std::size_t k = 0; k < targets->rows.size(); ++k) {
        kl += row_kl(targets->stored_probs, static_cast<Eigen::Index>(k), probs,
                     static_cast<Eigen::Index>(targets->rows[k]));
      }
      out.policy_cloning = kl / m;
    }
    if (spec.value_weight > 0.0) {
      double sq = 0.0;
      for (std::size_t k = 0; k < targets->rows.size(); ++k) {
        const double diff = (*cache.values)(static_cast<Eigen::Index>(targets->rows[k])) -
                            targets->stored_values[k];
        sq += diff * diff;
      }
      out.value_cloning = sq / m;
    }
  }
  out.total = out.cross_entropy + spec.kl_weight * out.policy_cloning +
              spec.value_weight * out.value_cloning;
  return out;
}

}  // namespace

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    n += static_cast<std::size_t>(weights[i].size() + biases[i].size());
  }
  if (value_head) {
    n += static_cast<std::size_t>(value_head->weights.size()) + 1;
  }
  return n;
}

void MlpModel::validate() const {
  if (layer_dims.size() < 2) {
    throw DimensionError("model needs at least two layer dims");
  }
  if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
    throw DimensionError("model has " + std::to_string(weights.size()) +
                         " weight matrices for " + std::to_string(layer_dims.size()) + " dims");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto out = static_cast<Eigen::Index>(layer_dims[i + 1]);
    const auto in = static_cast<Eigen::Index>(layer_dims[i]);
    if (weights[i].rows() != out || weights[i].cols() != in) {
      throw DimensionError("layer " + std::to_string(i) + " weights are " +
                           shape_str(weights[i].rows(), weights[i].cols()) + ", expected " +
                           shape_str(out, in));
    }
    if (biases[i].size() != out) {
      throw DimensionError("layer " + std::to_string(i) + " bias has length " +
                           std::to_string(biases[i].size()));
    }
    if (!finite(weights[i]) || !biases[i].allFinite()) {
      throw NumericError("layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
  if (value_head) {
    if (static_cast<std::size_t>(value_head->weights.size()) != hidden_width()) {
      throw DimensionError("value head width does not match last hidden layer");
    }
    if (!value_head->weights.allFinite() || !std::isfinite(value_head->bias)) {
      throw NumericError("value head has non-finite parameters");
    }
  }
}

bool identical(const MlpModel& a, const MlpModel& b) {
  if (a.layer_dims != b.layer_dims || a.weights.size() != b.weights.size() ||
      a.value_head.has_value() != b.value_head.has_value()) {
    return false;
  }
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    if (a.weights[i].rows() != b.weights[i].rows() || a.weights[i].cols() != b.weights[i].cols() ||
        a.weights[i] != b.weights[i] || a.biases[i] != b.biases[i]) {
      return false;
    }
  }
  if (a.value_head) {
    return a.value_head->weights == b.value_head->weights &&
           a.value_head->bias == b.value_head->bias;
  }
  return true;
}

bool Gradients::all_finite() const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!weights[i].allFinite() || !biases[i].allFinite()) {
      return false;
    }
  }
  return !value_head || (value_head->weights.allFinite() && std::isfinite(value_head->bias));
}

MlpModel mlp_init(std::span<const std::size_t> layer_dims, RngSeed seed, bool with_value_head) {
  if (layer_dims.size() < 2) {
    throw ConfigError("model needs at least an input and an output dim");
  }
  for (const auto d : layer_dims) {
    if (d == 0) {
      throw ConfigError("layer dims must be positive");
    }
  }
  Rng rng(seed);
  MlpModel model;
  model.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(layer_dims[i]);
    const auto out = static_cast<Eigen::Index>(layer_dims[i + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) {
        w(r, c) = rng.uniform(-limit, limit);
      }
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(Vector::Zero(out));
  }
  if (with_value_head) {
    const auto width = static_cast<Eigen::Index>(model.hidden_width());
    const double limit = std::sqrt(6.0 / static_cast<double>(width + 1));
    ValueHead head;
    head.weights.resize(width);
    for (Eigen::Index c = 0; c < width; ++c) {
      head.weights(c) = rng.uniform(-limit, limit);
    }
    model.value_head = std::move(head);
  }
  return model;
}

ForwardCache forward(const MlpModel& model, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != model.input_dim()) {
    throw DimensionError("input has " + std::to_string(features.cols()) +
                         " features, model expects " + std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  const auto layers = model.num_layers();
  cache.activations.reserve(layers);
  cache.pre_activations.reserve(layers);
  cache.activations.push_back(features);
  for (std::size_t i = 0; i < layers; ++i) {
    Matrix z = cache.activations.back() * model.weights[i].transpose();
    z.rowwise() += model.biases[i].transpose();
    if (i + 1 == layers) {
      cache.logits = z;
      cache.pre_activations.push_back(std::move(z));
    } else {
      cache.activations.push_back(z.cwiseMax(0.0));
      cache.pre_activations.push_back(std::move(z));
    }
  }
  if (model.value_head) {
    Vector v = cache.activations.back() * model.value_head->weights.transpose();
    v.array() += model.value_head->bias;
    cache.values = std::move(v);
  }
  return cache;
}

std::vector<ClassIndex> predict(const MlpModel& model, const Matrix& features) {
  const auto cache = forward(model, features);
  std::vector<ClassIndex> out(static_cast<std::size_t>(cache.logits.rows()));
  for (Eigen::Index r = 0; r < cache.logits.rows(); ++r) {
    Eigen::Index best = 0;
    cache.logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<ClassIndex>(best);
  }
  return out;
}

Vector softmax(std::span<const double> logits) {
  Vector out(static_cast<Eigen::Index>(logits.size()));
  if (logits.empty()) {
    return out;
  }
  double peak = logits[0];
  for (const double x : logits) {
    if (!std::isfinite(x)) {
      throw NumericError("softmax input is not finite");
    }
    peak = std::max(peak, x);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = std::exp(logits[i] - peak);
    total += out(static_cast<Eigen::Index>(i));
  }
  return out / total;
}

Matrix softmax_rows(const Matrix& logits) {
  if (!logits.allFinite()) {
    throw NumericError("softmax input is not finite");
  }
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

double cross_entropy(const Matrix& probs, std::span<const ClassIndex> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(probs.rows()) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= static_cast<std::size_t>(probs.cols())) {
      throw IndexError("label " + std::to_string(labels[r]) + " out of range");
    }
    sum -= std::log(std::max(probs(static_cast<Eigen::Index>(r),
                                   static_cast<Eigen::Index>(labels[r])),
                             kLogFloor));
  }
  return sum / static_cast<double>(labels.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: length " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] > 0.0) {
      sum += p[a] * std::log(std::max(p[a], kLogFloor) / std::max(q[a], kLogFloor));
    }
  }
  // Rounding can leave a tiny negative residue when p == q.
  return std::max(sum, 0.0);
}

double l2_distance_sq(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("l2_distance_sq: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "cross_entropy" || name == "ce") {
    return LossKind::kCrossEntropy;
  }
  if (name == "cross_entropy_cloning" || name == "clear") {
    return LossKind::kCrossEntropyCloning;
  }
  throw ConfigError("unknown loss spec '" + std::string(name) + "'");
}

LossBreakdown evaluate_loss(const MlpModel& model, const Batch& batch, const LossSpec& spec,
                            const CloningTargets* targets) {
  check_batch(model, batch);
  check_spec(model, batch, spec, targets);
  const auto cache = forward(model, batch.features);
  return loss_from_forward(cache, softmax_rows(cache.logits), batch, spec, targets);
}

LossAndGradients backward(const MlpModel& model, const Batch& batch, const LossSpec& spec,
                          const CloningTargets* targets) {
  check_batch(model, batch);
  check_spec(model, batch, spec, targets);
  if (batch.size() == 0) {
    throw InputError("backward: empty batch");
  }

  const auto cache = forward(model, batch.features);
  const Matrix probs = softmax_rows(cache.logits);
  LossAndGradients out;
  out.loss = loss_from_forward(cache, probs, batch, spec, targets);

  const auto n = static_cast<double>(batch.size());
  // d(mean CE)/dz = (p - onehot) / n, zero where the floor is active.
  Matrix dz = probs / n;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const auto y = static_cast<Eigen::Index>(batch.labels[r]);
    if (probs(row, y) >= kLogFloor) {
      dz(row, y) -= 1.0 / n;
    } else {
      dz.row(row).setZero();
    }
  }

  const bool cloning = has_cloning(spec, targets);
  const auto layers = model.num_layers();
  Vector dvalues;
  if (cloning) {
    const auto m = static_cast<double>(targets->rows.size());
    if (spec.kl_weight > 0.0) {
      const double scale = spec.kl_weight / m;
      for (std::size_t k = 0; k < targets->rows.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(targets->rows[k]);
        const auto srow = static_cast<Eigen::Index>(k);
        // d/dz_b of sum_a mu_a log(mu_a / p_a) = p_b * S - mu_b, over unfloored p_a.
        double mass = 0.0;
        for (Eigen::Index a = 0; a < probs.cols(); ++a) {
          if (targets->stored_probs(srow, a) > 0.0 && probs(row, a) >= kLogFloor) {
            mass += targets->stored_probs(srow, a);
          }
        }
        for (Eigen::Index b = 0; b < probs.cols(); ++b) {
          double g = probs(row, b) * mass;
          if (probs(row, b) >= kLogFloor) {
            g -= targets->stored_probs(srow, b);
          }
          dz(row, b) += scale * g;
        }
      }
    }
    if (spec.value_weight > 0.0) {
      dvalues = Vector::Zero(static_cast<Eigen::Index>(batch.size()));
      const double scale = 2.0 * spec.value_weight / m;
      for (std::size_t k = 0; k < targets->rows.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(targets->rows[k]);
        dvalues(row) += scale * ((*cache.values)(row) - targets->stored_values[k]);
      }
    }
  }

  Gradients& grads = out.gradients;
  grads.weights.resize(layers);
  grads.biases.resize(layers);
  if (model.value_head) {
    ValueHead head;
    head.weights = RowVector::Zero(model.value_head->weights.size());
    if (dvalues.size() > 0) {
      head.weights = dvalues.transpose() * cache.activations.back();
      head.bias = dvalues.sum();
    }
    grads.value_head = std::move(head);
  }

  for (std::size_t li = layers; li-- > 0;) {
    const Matrix& input = cache.activations[li];
    grads.weights[li] = dz.transpose() * input;
    grads.biases[li] = dz.colwise().sum().transpose();
    if (li == 0) {
      break;
    }
    Matrix da = dz * model.weights[li];
    if (li + 1 == layers && dvalues.size() > 0) {
      da += dvalues * model.value_head->weights;
    }
    const Matrix& z = cache.pre_activations[li - 1];
    dz = (z.array() > 0.0).select(da.array(), 0.0).matrix();
  }
  return out;
}

void apply_sgd(MlpModel& model, const Gradients& grads, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (grads.weights.size() != model.weights.size() || grads.biases.size() != model.biases.size() ||
      grads.value_head.has_value() != model.value_head.has_value()) {
    throw DimensionError("gradients are not congruent with the model");
  }
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    if (grads.weights[i].rows() != model.weights[i].rows() ||
        grads.weights[i].cols() != model.weights[i].cols() ||
        grads.biases[i].size() != model.biases[i].size()) {
      throw DimensionError("gradient layer " + std::to_string(i) + " shape mismatch");
    }
  }
  if (!grads.all_finite()) {
    throw NumericError("refusing SGD step with non-finite gradients");
  }
  if (learning_rate == 0.0) {
    return;
  }
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    model.weights[i] -= learning_rate * grads.weights[i];
    model.biases[i] -= learning_rate * grads.biases[i];
  }
  if (model.value_head) {
    model.value_head->weights -= learning_rate * grads.value_head->weights;
    model.value_head->bias -= learning_rate * grads.value_head->bias;
  }
}

MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double learning_rate) {
  MlpModel next = model;
  apply_sgd(next, grads, learning_rate);
  return next;
}

}  // namespace fcil::nn
