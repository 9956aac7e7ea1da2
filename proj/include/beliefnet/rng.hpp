#pragma once

#include <cmath>
#include <cstdint>

namespace beliefnet {

// Deterministic splittable RNG. A child stream is derived from the parent's
// key plus up to three tag values, so draws for one (step, episode, agent)
// never shift when an unrelated part of the pipeline consumes more or fewer
// numbers. State is two 64-bit words, trivially serializable.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : key_(seed), state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t key() const { return key_; }

  // Independent child stream; does not advance this stream.
  Rng child(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
    uint64_t k = mix(key_ ^ mix(a ^ 0xd1b54a32d192ed03ull));
    k = mix(k ^ mix(b ^ 0x8cb92ba72f3d8dd7ull));
    k = mix(k ^ mix(c ^ 0xa24baed4963ee407ull));
    return Rng(k);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; draws two uniforms per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

 private:
  uint64_t key_;
  uint64_t state_;
};

}  // namespace beliefnet
