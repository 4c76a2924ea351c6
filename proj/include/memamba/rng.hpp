#pragma once

#include <cmath>
#include <cstdint>

namespace memamba {

// Counter-based deterministic RNG (SplitMix64 core). Streams are derived by
// hashing a parent seed with a tag, so independent substreams never share
// state and every draw is reproducible from (seed, tag path, call index).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Independent substream; does not advance this stream deterministically
  // relative to tag choice (fork(a) and fork(b) never collide for a != b).
  Rng fork(std::uint64_t tag) const {
    Rng mix(state_ ^ 0x6a09e667f3bcc909ULL);
    mix.state_ += tag * 0xd1342543de82ef95ULL;
    std::uint64_t derived = mix.next_u64();
    return Rng(derived);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Marsaglia polar method (explicit for portability).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Exponential with given rate (> 0).
  double exponential(double rate) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return -std::log(u) / rate;
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace memamba
