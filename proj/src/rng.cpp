#include "potrl/rng.hpp"

namespace potrl {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

}  // namespace

uint64_t derive_seed(uint64_t root, std::string_view tag) {
  return mix(root, fnv1a(tag));
}

uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a) {
  return mix(derive_seed(root, tag), a);
}

uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a, uint64_t b) {
  return mix(derive_seed(root, tag, a), b);
}

Rng::Rng(uint64_t seed) {
  // Run the seed through splitmix so nearby seeds give unrelated streams.
  uint64_t s = seed;
  engine_.seed(splitmix64(s));
}

uint64_t Rng::next_u64() { return engine_(); }

Real Rng::uniform() {
  return static_cast<Real>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::uniform_int(uint64_t n) {
  // Multiply-shift range reduction; bias is < 2^-64 per draw.
  return static_cast<uint64_t>(
      (static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

int64_t Rng::uniform_range(int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(
                  uniform_int(static_cast<uint64_t>(hi - lo + 1)));
}

Real Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  Real u1 = uniform();
  Real u2 = uniform();
  while (u1 <= 0) u1 = uniform();
  Real radius = std::sqrt(Real(-2) * std::log(u1));
  Real angle = Real(2) * Real(M_PI) * u2;
  cached_normal_ = radius * std::sin(angle);
  have_cached_normal_ = true;
  return radius * std::cos(angle);
}

int Rng::categorical(std::span<const Real> probs) {
  Real u = uniform();
  Real acc = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace potrl
