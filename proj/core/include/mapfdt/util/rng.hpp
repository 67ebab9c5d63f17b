#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mapfdt {

// Seeded generator with portable draw functions. std::uniform_int_distribution
// et al. are implementation-defined, so every bounded draw is built here from
// raw mt19937_64 output; file-level determinism relies on this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, n). Rejection sampling over the top range to avoid modulo bias.
  uint64_t uniform_below(uint64_t n);

  // Uniform in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Two draws consumed per call.
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; stable function of (root seed, stream id).
  Rng fork(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& s);

  bool operator==(const Rng& other) const;

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

// SplitMix64 finalizer; used for deriving child seeds and hashing small keys.
uint64_t splitmix64(uint64_t x);

}  // namespace mapfdt
