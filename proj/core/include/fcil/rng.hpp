#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace fcil {

/// Seed wrapper so seeds are not confused with counts or ids.
struct RngSeed {
  std::uint64_t value = 0;
};

/// SplitMix64 stream. All draws are implemented here (not via <random>
/// distributions) so identical seeds give bit-identical streams on every platform.
class Rng {
 public:
  explicit Rng(RngSeed seed) : state_(seed.value) {}
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  double normal();
  double gamma(double shape);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// Mixes a base seed with a list of stream tags into an independent child seed.
RngSeed derive_seed(RngSeed base, std::initializer_list<std::uint64_t> tags);

}  // namespace fcil
