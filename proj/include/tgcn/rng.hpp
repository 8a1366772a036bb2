#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tgcn {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic, self-contained generator (xoshiro256++). Independent of the
// standard library's distribution implementations so streams are stable
// across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (cosine branch only, no cached spare).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Stable seed derivation for independent sub-streams, e.g. one per sample.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                 std::string_view tag = {}) {
  std::uint64_t h = seed ^ 0x243f6a8885a308d3ULL;
  h = splitmix64(h);
  h ^= index;
  h = splitmix64(h);
  for (char c : tag) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h = splitmix64(h);
  }
  return h;
}

}  // namespace tgcn
