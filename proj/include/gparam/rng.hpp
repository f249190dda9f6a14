#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "gparam/io_util.hpp"

namespace gparam {

// Deterministic random source. std::mt19937_64 has a fully specified output
// sequence, and the distributions below are hand-rolled so results are
// bit-identical across standard libraries (std::*_distribution is not
// portable).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The second variate is discarded to keep
  // the call sequence trivially reproducible.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  int64_t randint(int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::randint: n must be positive");
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(randint(i + 1))]);
    }
  }

  // Independent stream derived from a label; used to decouple e.g. data
  // generation from weight init without manual seed bookkeeping.
  Rng fork(std::string_view label) const {
    uint64_t h = fnv1a64(label);
    return Rng(seed_mix(h));
  }

  static Rng from_seed_and_label(uint64_t seed, std::string_view label) {
    uint64_t h = fnv1a64(label);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return Rng(h);
  }

 private:
  uint64_t seed_mix(uint64_t h) const {
    // Mix the label hash with fresh engine output; const_cast-free approach:
    // hash the engine state indirectly via a copy.
    std::mt19937_64 copy = engine_;
    uint64_t s = copy();
    return s ^ (h + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2));
  }

  std::mt19937_64 engine_;
};

}  // namespace gparam
