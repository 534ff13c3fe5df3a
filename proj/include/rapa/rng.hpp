#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace rapa {

/// xoshiro256** seeded through SplitMix64.
///
/// Every draw used by the library goes through this class so that a seed
/// reproduces the same sequence on every platform and standard library.
/// Real-valued and Gaussian draws are computed here as well; the
/// <random> distributions are implementation-defined and are never used.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  /// Independent stream for (seed, ids...). Used to give each worker, image
  /// or vote its own generator so results do not depend on scheduling.
  static SeededRng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, bound); unbiased (rejection on the multiply-shift).
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (cached second value).
  double normal() noexcept;
  bool coin() noexcept { return (next_u64() >> 63) != 0; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; also used to hash stream ids.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Fisher-Yates permutation of {0, ..., n-1}; n = 0 gives an empty vector.
std::vector<std::uint32_t> shuffle(std::size_t n, SeededRng& rng);

}  // namespace rapa
