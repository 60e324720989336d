#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace stabcv {

/// Counter-based generator: the i-th draw is a pure function of (seed, i),
/// so streams are reproducible across platforms and standard libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer on [0, bound). bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);

  /// Standard normal via Box-Muller; the paired variate is kept for the next call.
  double normal();

  bool coin() { return (next_u64() >> 63) != 0; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng);

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace stabcv
