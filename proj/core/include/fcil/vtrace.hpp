#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fcil/nn.hpp"

namespace fcil::clear {

/// Off-policy rollout of length n with everything the V-trace target needs.
struct Trajectory {
  std::vector<double> rewards;
  /// mu(a_t | h_t), in (0, 1].
  std::vector<double> behavior_probs;
  /// pi(a_t | h_t), in (0, 1].
  std::vector<double> current_probs;
  /// V(h_t) for t < n.
  std::vector<double> values;
  /// V(h_n).
  double bootstrap_value = 0.0;
  double discount = 0.99;
  double clip_c = 1.0;
  double clip_rho = 1.0;
  /// Number of TD terms summed from each position; unset means the whole remaining episode.
  std::optional<std::size_t> horizon;

  std::size_t size() const { return rewards.size(); }

  /// Throws DimensionError / NumericError when the invariants do not hold.
  void validate() const;

  /// min(clip_c, pi/mu) and min(clip_rho, pi/mu) at step t.
  double trace_weight(std::size_t t) const;
  double rho(std::size_t t) const;
};

/// v_s for s = 0..n-1.
std::vector<double> compute_vtrace(const Trajectory& traj);

/// sum_s -rho_s log pi(a_s|h_s) (r_s + gamma v_{s+1} - V(h_s)), with v_n the bootstrap value.
double policy_gradient_loss(const Trajectory& traj, std::span<const double> vtrace);

/// 1/2 sum_s (v_s - V(h_s))^2.
double value_loss(std::span<const double> vtrace, std::span<const double> values);

/// Mean Shannon entropy of the rows. Callers subtract it to reward exploration.
/// Throws NumericError when a row is not normalized within 1e-6.
double entropy_loss(const nn::Matrix& probs);

/// KL(stored || current).
double policy_cloning_loss(std::span<const double> stored, std::span<const double> current);

/// ||current - stored||^2.
double value_cloning_loss(std::span<const double> current, std::span<const double> stored);

inline double value_cloning_loss(double current, double stored) {
  return value_cloning_loss(std::span<const double>(&current, 1), std::span<const double>(&stored, 1));
}

}  // namespace fcil::clear
