#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace clam {

// Deterministic RNG with hand-rolled distributions so that streams do not
// depend on the standard library implementation. splitmix64 state update,
// which is plenty for simulation seeding and weight init.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Marsaglia polar method, no cached spare (keeps forked streams independent
  // of call parity).
  double normal(double mean, double sd) {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return mean + sd * u * std::sqrt(-2.0 * std::log(s) / s);
  }

  // Rejection-sampled truncation; bounds are a few sd wide in practice.
  double truncated_normal(double mean, double sd, double lo, double hi) {
    for (;;) {
      double x = normal(mean, sd);
      if (x >= lo && x <= hi) return x;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; distinct `stream` values give distinct seeds.
  Rng fork(uint64_t stream) const {
    Rng child(state_ ^ (0xA0761D6478BD642FULL * (stream + 1)));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
};

}  // namespace clam
