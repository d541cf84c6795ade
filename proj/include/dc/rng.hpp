#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dc {

// Seedable generator used everywhere randomness is needed.
//
// The raw stream is std::mt19937_64, which the C++ standard pins down
// bit-exactly. The derived draws (uniform doubles, normals, bounded ints)
// are implemented here rather than with std::*_distribution so that the
// whole stream depends only on the seed, not on the standard library
// vendor.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // Uniform in [0, 1): 53 mantissa bits.
  double uniform() { return (next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two draws per pair, caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  uint64_t below(uint64_t n) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable derivation of sub-seeds from a master seed plus a role tag,
// via splitmix64 mixing. Lets independent streams (per trial, per
// purpose) be reproduced without sharing generator state.
uint64_t derive_seed(uint64_t master, uint64_t tag, uint64_t index = 0);

// FNV-1a over a string; used to turn role names into tags.
uint64_t tag_of(const char* name);

}  // namespace dc
