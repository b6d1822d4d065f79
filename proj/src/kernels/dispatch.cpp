#include "tfevolve/kernels/dispatch.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string_view>

#include "tfevolve/kernels/color.hpp"
#include "tfevolve/kernels/march.hpp"

namespace tfevolve::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(TFEVOLVE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() {
  const bool avx2 = cpu_has_avx2();
  if (const char* env = std::getenv("TFEVOLVE_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && avx2) return Isa::avx2;
  }
  return avx2 ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

const char* to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "scalar";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> isas{Isa::scalar};
  if (cpu_has_avx2()) isas.push_back(Isa::avx2);
  return isas;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  const auto isas = available_isas();
  if (std::find(isas.begin(), isas.end(), isa) == isas.end()) {
    throw std::invalid_argument(std::string("kernel variant not available: ") + to_string(isa));
  }
  active().store(isa, std::memory_order_relaxed);
}

void march(const MarchParams& params, const RayBatch& rays, const AccumBatch& out) {
#if defined(TFEVOLVE_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return march_avx2(params, rays, out);
#endif
  march_scalar(params, rays, out);
}

void rgba_to_hsvl(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out) {
#if defined(TFEVOLVE_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return rgba_to_hsvl_avx2(rgba, pixels, out);
#endif
  rgba_to_hsvl_scalar(rgba, pixels, out);
}

}  // namespace tfevolve::kernels
