#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tfevolve {

// Seeded random source. The engine is std::mt19937_64; the distributions are
// written out here because the standard library leaves theirs
// implementation-defined, and sessions must replay identically everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, so unbiased.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; one draw consumes two uniforms.
  double normal(double mean = 0.0, double sd = 1.0);

  // Text form of the full engine state (for checkpoints).
  std::string state() const;
  void restore_state(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace tfevolve
