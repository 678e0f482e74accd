#pragma once

#include <cmath>
#include <cstdint>

namespace slotssm {

// Counter-based generator: every draw is splitmix64(key ^ mix(counter)).
// No hidden state beyond (key, counter), so streams are reproducible across
// platforms and can be re-entered at any counter value (used for step-keyed
// batch sampling and checkpoint-resume).
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream)
      : key_(mix(seed ^ mix(stream ^ 0x9e3779b97f4a7c15ull))) {}

  uint64_t next_u64() { return mix(key_ ^ mix(ctr_++)); }

  // 53-bit mantissa uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n), n > 0; multiply-shift, no modulo bias worth
  // caring about at these ranges
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
  }

  // Box-Muller; consumes two uniforms per call, no cached second value
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t ctr_ = 0;
};

}  // namespace slotssm
