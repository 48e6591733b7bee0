#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace caps {

// Deterministic, platform-independent random stream (splitmix64 core).
// std::mt19937 + std distributions are avoided on purpose: their outputs are
// not pinned across standard library versions, and training logs / generated
// datasets must be byte-reproducible from a seed alone.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // independent substream; mixing the tag through the output function keeps
  // fork(a) and fork(b) decorrelated even for adjacent tags
  Rng fork(uint64_t tag) {
    Rng r(state_ ^ (0x632be59bd9b4e019ull * (tag + 1)));
    r.next_u64();
    return r;
  }

  // uniform in [0,1), 53-bit resolution
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0,n)
  uint64_t index(uint64_t n) {
    unsigned __int128 m = (unsigned __int128)next_u64() * n;
    uint64_t lo = (uint64_t)m;
    if (lo < n) {
      uint64_t t = (0 - n) % n;
      while (lo < t) {
        m = (unsigned __int128)next_u64() * n;
        lo = (uint64_t)m;
      }
    }
    return (uint64_t)(m >> 64);
  }

  // Box-Muller; two raw draws per call, no cached spare
  double normal(double mean, double stddev) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = (size_t)index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace caps
