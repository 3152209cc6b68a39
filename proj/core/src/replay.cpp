#include "fcil/replay.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "fcil/errors.hpp"

namespace fcil::clear {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) {
    throw ConfigError("replay buffer capacity must be positive");
  }
  entries_.reserve(capacity);
}

void ReplayBuffer::insert(ReplayEntry entry, Rng& rng) {
  if (!entries_.empty() && entry.features.size() != entries_.front().features.size()) {
    throw DimensionError("replay entry has " + std::to_string(entry.features.size()) +
                         " features, buffer holds " +
                         std::to_string(entries_.front().features.size()));
  }
  double mass = 0.0;
  for (const double p : entry.stored_probs) {
    if (!(p >= 0.0)) {
      throw NumericError("stored_probs contains a negative or NaN value");
    }
    mass += p;
  }
  if (std::abs(mass - 1.0) > 1e-6) {
    throw NumericError("stored_probs sums to " + std::to_string(mass));
  }
  ++seen_count_;
  entry.insert_step = seen_count_ - 1;
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(entry));
    return;
  }
  const auto slot = rng.below(seen_count_);
  if (slot < capacity_) {
    entries_[static_cast<std::size_t>(slot)] = std::move(entry);
  }
}

std::vector<ReplayEntry> ReplayBuffer::sample(std::size_t k, Rng& rng) const {
  std::vector<ReplayEntry> out;
  if (k == 0) {
    return out;
  }
  if (entries_.empty()) {
    throw EmptyBufferError("cannot sample from an empty replay buffer");
  }
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(entries_[static_cast<std::size_t>(rng.below(entries_.size()))]);
  }
  return out;
}

nlohmann::json ReplayBuffer::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"features", e.features},
                       {"label", e.label},
                       {"stored_probs", e.stored_probs},
                       {"stored_value", e.stored_value},
                       {"insert_step", e.insert_step}});
  }
  return {{"capacity", capacity_}, {"seen_count", seen_count_}, {"entries", std::move(entries)}};
}

ReplayBuffer ReplayBuffer::from_json(const nlohmann::json& doc) {
  try {
    ReplayBuffer buffer(doc.at("capacity").get<std::size_t>());
    buffer.seen_count_ = doc.at("seen_count").get<std::uint64_t>();
    for (const auto& item : doc.at("entries")) {
      ReplayEntry e;
      e.features = item.at("features").get<std::vector<double>>();
      e.label = item.at("label").get<nn::ClassIndex>();
      e.stored_probs = item.at("stored_probs").get<std::vector<double>>();
      e.stored_value = item.at("stored_value").get<double>();
      e.insert_step = item.at("insert_step").get<std::uint64_t>();
      if (!buffer.entries_.empty() &&
          e.features.size() != buffer.entries_.front().features.size()) {
        throw DimensionError("replay snapshot mixes feature widths");
      }
      buffer.entries_.push_back(std::move(e));
    }
    if (buffer.entries_.size() > buffer.capacity_ || buffer.seen_count_ < buffer.entries_.size()) {
      throw SchemaError("replay snapshot is inconsistent with its capacity/seen_count");
    }
    return buffer;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed replay snapshot: ") + e.what());
  }
}

}  // namespace fcil::clear
