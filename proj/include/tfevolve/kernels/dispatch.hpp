#pragma once

#include <string>
#include <vector>

namespace tfevolve::kernels {

// Instruction-set variants of the data-parallel kernels. Every variant is
// bit-identical to `scalar`; the choice only affects speed.
enum class Isa { scalar, avx2 };

const char* to_string(Isa isa);

// Variants compiled into this binary and supported by the running CPU.
std::vector<Isa> available_isas();

// The variant kernels dispatch to. Defaults to the fastest available one;
// the environment variable TFEVOLVE_ISA=scalar|avx2 overrides it.
Isa active_isa();

// Throws std::invalid_argument if `isa` is not available.
void set_active_isa(Isa isa);

// Restores the previous variant on scope exit (tests).
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace tfevolve::kernels
