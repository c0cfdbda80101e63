#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace popavg {

// splitmix64 finalizer; used for seed derivation so that member/event streams
// are independent of thread scheduling.
uint64_t mix64(uint64_t x);
uint64_t hash_combine(uint64_t seed, uint64_t value);
uint64_t hash_combine(uint64_t seed, std::string_view tag);

// mt19937_64 core with hand-rolled distributions. std::* distributions are
// implementation-defined, so every draw here is spelled out to keep runs
// bitwise reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1) with 53 random bits
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // [0,n) via 128-bit multiply-shift
  uint64_t uniform_int(uint64_t n);

  double normal();
  double gamma(double alpha);            // shape alpha, scale 1
  double beta(double a, double b);

  std::vector<int> permutation(int n);   // Fisher-Yates

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace popavg
