#include "fcil/vtrace.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fcil/errors.hpp"

namespace fcil::clear {

void Trajectory::validate() const {
  const auto n = rewards.size();
  if (n == 0) {
    throw DimensionError("trajectory must have at least one step");
  }
  if (behavior_probs.size() != n || current_probs.size() != n || values.size() != n) {
    throw DimensionError("trajectory fields have inconsistent lengths");
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (!(behavior_probs[t] > 0.0) || behavior_probs[t] > 1.0) {
      throw NumericError("behavior probability at step " + std::to_string(t) +
                         " is outside (0, 1]");
    }
    if (!(current_probs[t] > 0.0) || current_probs[t] > 1.0) {
      throw NumericError("current probability at step " + std::to_string(t) +
                         " is outside (0, 1]");
    }
    if (!std::isfinite(rewards[t]) || !std::isfinite(values[t])) {
      throw NumericError("non-finite reward or value at step " + std::to_string(t));
    }
  }
  if (!std::isfinite(bootstrap_value) || !std::isfinite(discount) || !std::isfinite(clip_c) ||
      !std::isfinite(clip_rho) || discount < 0.0 || discount > 1.0 || clip_c < 0.0 ||
      clip_rho < 0.0) {
    throw NumericError("discount must lie in [0,1] and clip constants must be finite and >= 0");
  }
  if (horizon && *horizon == 0) {
    throw DimensionError("horizon must be at least one step");
  }
}

double Trajectory::trace_weight(std::size_t t) const {
  return std::min(clip_c, current_probs[t] / behavior_probs[t]);
}

double Trajectory::rho(std::size_t t) const {
  return std::min(clip_rho, current_probs[t] / behavior_probs[t]);
}

std::vector<double> compute_vtrace(const Trajectory& traj) {
  traj.validate();
  const auto n = traj.size();
  const auto value_at = [&](std::size_t t) { return t < n ? traj.values[t] : traj.bootstrap_value; };
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    delta[t] = traj.rho(t) * (traj.rewards[t] + traj.discount * value_at(t + 1) - traj.values[t]);
  }

  std::vector<double> out(n);
  if (!traj.horizon || *traj.horizon >= n) {
    // v_s - V(h_s) = delta_s + gamma c_s (v_{s+1} - V(h_{s+1})), and v_n = V(h_n).
    double next_correction = 0.0;
    for (std::size_t s = n; s-- > 0;) {
      const double correction = delta[s] + traj.discount * traj.trace_weight(s) * next_correction;
      out[s] = traj.values[s] + correction;
      next_correction = correction;
    }
    return out;
  }

  const auto h = *traj.horizon;
  for (std::size_t s = 0; s < n; ++s) {
    const auto end = std::min(n, s + h);
    double acc = 0.0;
    double scale = 1.0;
    for (std::size_t t = s; t < end; ++t) {
      acc += scale * delta[t];
      scale *= traj.discount * traj.trace_weight(t);
    }
    out[s] = traj.values[s] + acc;
  }
  return out;
}

double policy_gradient_loss(const Trajectory& traj, std::span<const double> vtrace) {
  traj.validate();
  const auto n = traj.size();
  if (vtrace.size() != n) {
    throw DimensionError("vtrace has " + std::to_string(vtrace.size()) + " targets for " +
                         std::to_string(n) + " steps");
  }
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double next = s + 1 < n ? vtrace[s + 1] : traj.bootstrap_value;
    const double advantage = traj.rewards[s] + traj.discount * next - traj.values[s];
    loss -= traj.rho(s) * std::log(traj.current_probs[s]) * advantage;
  }
  return loss;
}

double value_loss(std::span<const double> vtrace, std::span<const double> values) {
  return 0.5 * nn::l2_distance_sq(vtrace, values);
}

double entropy_loss(const nn::Matrix& probs) {
  if (probs.rows() == 0) {
    return 0.0;
  }
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    double mass = 0.0;
    double h = 0.0;
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      const double p = probs(r, a);
      if (!(p >= 0.0)) {
        throw NumericError("entropy_loss: negative or NaN probability");
      }
      mass += p;
      if (p > 0.0) {
        h -= p * std::log(p);
      }
    }
    if (std::abs(mass - 1.0) > 1e-6) {
      throw NumericError("entropy_loss: row " + std::to_string(r) + " sums to " +
                         std::to_string(mass));
    }
    total += h;
  }
  return total / static_cast<double>(probs.rows());
}

double policy_cloning_loss(std::span<const double> stored, std::span<const double> current) {
  return nn::kl_divergence(stored, current);
}

double value_cloning_loss(std::span<const double> current, std::span<const double> stored) {
  return nn::l2_distance_sq(current, stored);
}

}  // namespace fcil::clear
