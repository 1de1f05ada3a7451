#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace meanfield {

// Counter-based Gaussian stream: every draw is a pure function of a
// (seed, key...) tuple, so parallel schedules cannot change the output.
// Mixing is splitmix64 absorption of each key word.

inline uint64_t splitmix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_key(uint64_t state, uint64_t word) {
  return splitmix64(state ^ (word * 0xff51afd7ed558ccdULL));
}

struct CounterKey {
  uint64_t state;

  explicit CounterKey(uint64_t seed) : state(splitmix64(seed)) {}
  CounterKey with(uint64_t word) const { return CounterKey{*this, word}; }

 private:
  CounterKey(const CounterKey& base, uint64_t word)
      : state(mix_key(base.state, word)) {}
};

// Uniform in (0,1), never exactly 0 or 1.
inline double counter_uniform(const CounterKey& key, uint64_t counter) {
  uint64_t bits = mix_key(key.state, counter);
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// One standard normal per (key, counter) via Box-Muller; the cosine twin
// is discarded so draws stay strictly counter-addressable.
inline double counter_gauss(const CounterKey& key, uint64_t counter) {
  double u1 = counter_uniform(key, 2 * counter);
  double u2 = counter_uniform(key, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace meanfield
