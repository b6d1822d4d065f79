#include <immintrin.h>

#include <algorithm>
#include <cstring>

#include "tfevolve/kernels/color.hpp"

namespace tfevolve::kernels {

void rgba_to_hsvl_avx2(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out) {
  const __m256i byte = _mm256_set1_epi32(0xFF);
  const __m256 inv = _mm256_set1_ps(255.0f);
  const __m256 zero = _mm256_setzero_ps();
  const __m256 sixty = _mm256_set1_ps(60.0f);

  std::size_t i = 0;
  for (; i + 8 <= pixels; i += 8) {
    const __m256i px = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(rgba + 4 * i));
    const __m256 r = _mm256_div_ps(_mm256_cvtepi32_ps(_mm256_and_si256(px, byte)), inv);
    const __m256 g = _mm256_div_ps(_mm256_cvtepi32_ps(_mm256_and_si256(_mm256_srli_epi32(px, 8), byte)), inv);
    const __m256 b = _mm256_div_ps(_mm256_cvtepi32_ps(_mm256_and_si256(_mm256_srli_epi32(px, 16), byte)), inv);
    const __m256 mx = _mm256_max_ps(r, _mm256_max_ps(g, b));
    const __m256 mn = _mm256_min_ps(r, _mm256_min_ps(g, b));
    const __m256 delta = _mm256_sub_ps(mx, mn);

    const __m256 h_r = _mm256_mul_ps(sixty, _mm256_div_ps(_mm256_sub_ps(g, b), delta));
    const __m256 h_g = _mm256_mul_ps(sixty, _mm256_add_ps(_mm256_div_ps(_mm256_sub_ps(b, r), delta), _mm256_set1_ps(2.0f)));
    const __m256 h_b = _mm256_mul_ps(sixty, _mm256_add_ps(_mm256_div_ps(_mm256_sub_ps(r, g), delta), _mm256_set1_ps(4.0f)));
    // Same precedence as the scalar branch chain: red, then green, then blue.
    __m256 h = _mm256_blendv_ps(h_b, h_g, _mm256_cmp_ps(mx, g, _CMP_EQ_OQ));
    h = _mm256_blendv_ps(h, h_r, _mm256_cmp_ps(mx, r, _CMP_EQ_OQ));
    h = _mm256_blendv_ps(h, _mm256_add_ps(h, _mm256_set1_ps(360.0f)), _mm256_cmp_ps(h, zero, _CMP_LT_OQ));
    h = _mm256_and_ps(h, _mm256_cmp_ps(delta, zero, _CMP_GT_OQ));

    const __m256 s = _mm256_and_ps(_mm256_div_ps(delta, mx), _mm256_cmp_ps(mx, zero, _CMP_GT_OQ));
    const __m256 luma = _mm256_add_ps(
        _mm256_add_ps(_mm256_mul_ps(_mm256_set1_ps(0.2126f), r), _mm256_mul_ps(_mm256_set1_ps(0.7152f), g)),
        _mm256_mul_ps(_mm256_set1_ps(0.0722f), b));

    _mm256_storeu_ps(out.hue + i, h);
    _mm256_storeu_ps(out.saturation + i, s);
    _mm256_storeu_ps(out.value + i, mx);
    _mm256_storeu_ps(out.luma + i, luma);
  }
  if (i < pixels) {
    ColorPlanes tail{out.hue + i, out.saturation + i, out.value + i, out.luma + i};
    rgba_to_hsvl_scalar(rgba + 4 * i, pixels - i, tail);
  }
}

}  // namespace tfevolve::kernels
