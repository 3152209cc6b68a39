#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcil/nn.hpp"
#include "fcil/rng.hpp"

namespace fcil::clear {

/// One remembered sample together with the model's outputs when it was stored.
struct ReplayEntry {
  std::vector<double> features;
  nn::ClassIndex label = 0;
  /// Output distribution at insertion time (the behaviour policy).
  std::vector<double> stored_probs;
  /// Value-head output at insertion time, 0 without a head.
  double stored_value = 0.0;
  std::uint64_t insert_step = 0;
};

/// Reservoir-sampled memory: after n >= capacity insertions every streamed
/// item is resident with probability capacity / n.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100);

  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen_count() const { return seen_count_; }
  const std::vector<ReplayEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Throws DimensionError when the feature width differs from resident entries,
  /// NumericError when stored_probs is not normalized within 1e-6.
  void insert(ReplayEntry entry, Rng& rng);

  /// k draws, uniform with replacement. Throws EmptyBufferError when k > 0 and the buffer is empty.
  std::vector<ReplayEntry> sample(std::size_t k, Rng& rng) const;

  /// Snapshot: {capacity, seen_count, entries: [{features, label, stored_probs, stored_value, insert_step}]}.
  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& doc);

 private:
  std::size_t capacity_;
  std::uint64_t seen_count_ = 0;
  std::vector<ReplayEntry> entries_;
};

inline void buffer_insert(ReplayBuffer& buffer, ReplayEntry entry, Rng& rng) {
  buffer.insert(std::move(entry), rng);
}

inline std::vector<ReplayEntry> buffer_sample(const ReplayBuffer& buffer, std::size_t k, Rng& rng) {
  return buffer.sample(k, rng);
}

}  // namespace fcil::clear
