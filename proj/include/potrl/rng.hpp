#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "potrl/common.hpp"

namespace potrl {

// All randomness in the project flows from one root seed. Subsystems derive
// their own streams with derive_seed(root, tag, counters...), so results do
// not depend on call order or thread scheduling.

uint64_t splitmix64(uint64_t& state);

uint64_t derive_seed(uint64_t root, std::string_view tag);
uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a);
uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a, uint64_t b);

// Deterministic generator with hand-rolled distributions. The stdlib
// distribution adaptors are implementation-defined, which would break
// byte-identical reruns across toolchains, so only the raw engine is used.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  Real uniform();

  // Uniform integer in [0, n). n must be >= 1.
  uint64_t uniform_int(uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_range(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller.
  Real normal();

  // Index draw from an explicit probability vector (sums to ~1).
  int categorical(std::span<const Real> probs);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_cached_normal_ = false;
  Real cached_normal_ = 0;
};

}  // namespace potrl
