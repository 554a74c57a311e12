#pragma once

// Deterministic random streams. All randomness in the library flows from a
// single user seed through splitmix64 mixing: the stream for sub-task p of a
// run with seed s is seeded with splitmix64(s ^ golden*(p+1)). Gaussians come
// from Box-Muller on raw 53-bit uniforms, so sequences are identical across
// standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sk {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Stream-splitting rule: sub-stream `index` of master seed `seed`.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return splitmix64(seed ^ (0x9e3779b97f4a7c15ull * (index + 1)));
}

class GaussianRng {
public:
  explicit GaussianRng(uint64_t seed) : rng_(seed) {}

  double uniform() {  // (0, 1]
    return ((rng_() >> 11) + 1) * 0x1p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  uint64_t bits() { return rng_(); }

  std::vector<double> normal_vector(size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * normal();
    return v;
  }

private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sk
