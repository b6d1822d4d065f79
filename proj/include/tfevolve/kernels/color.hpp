#pragma once

#include <cstddef>
#include <cstdint>

namespace tfevolve::kernels {

// Per-pixel colour features of an RGBA8 buffer. Hue in degrees [0, 360),
// saturation and value in [0, 1], Rec. 709 luma in [0, 1].
struct ColorPlanes {
  float* hue = nullptr;
  float* saturation = nullptr;
  float* value = nullptr;
  float* luma = nullptr;
};

void rgba_to_hsvl_scalar(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out);
#if defined(TFEVOLVE_HAVE_AVX2)
void rgba_to_hsvl_avx2(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out);
#endif

void rgba_to_hsvl(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out);

}  // namespace tfevolve::kernels
