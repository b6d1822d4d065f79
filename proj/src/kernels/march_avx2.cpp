// AVX2 variant of march_scalar: eight rays per lane group. Every arithmetic
// step mirrors the scalar reference operation for operation, so the two
// produce identical bits (FMA contraction is disabled for this target).
#include <immintrin.h>

#include <algorithm>

#include "tfevolve/kernels/march.hpp"

namespace tfevolve::kernels {
namespace {

inline __m256 lerp8(__m256 a, __m256 b, __m256 t) {
  return _mm256_add_ps(a, _mm256_mul_ps(t, _mm256_sub_ps(b, a)));
}

struct Grid8 {
  const float* data;
  __m256 maxx, maxy, maxz;
  __m256i nxm1, nym1, nzm1;
  __m256i sy, sz;
};

Grid8 make_grid(const VolumeView& v) {
  return {v.data,
          _mm256_set1_ps(static_cast<float>(v.nx - 1)),
          _mm256_set1_ps(static_cast<float>(v.ny - 1)),
          _mm256_set1_ps(static_cast<float>(v.nz - 1)),
          _mm256_set1_epi32(v.nx - 1),
          _mm256_set1_epi32(v.ny - 1),
          _mm256_set1_epi32(v.nz - 1),
          _mm256_set1_epi32(v.nx),
          _mm256_set1_epi32(v.nx * v.ny)};
}

inline __m256 gather(const float* base, __m256i index) {
  return _mm256_i32gather_ps(base, index, 4);
}

inline __m256 trilinear8(const Grid8& g, __m256 x, __m256 y, __m256 z) {
  const __m256 zero = _mm256_setzero_ps();
  __m256 inside = _mm256_and_ps(_mm256_cmp_ps(x, zero, _CMP_GE_OQ), _mm256_cmp_ps(x, g.maxx, _CMP_LE_OQ));
  inside = _mm256_and_ps(inside, _mm256_cmp_ps(y, zero, _CMP_GE_OQ));
  inside = _mm256_and_ps(inside, _mm256_cmp_ps(y, g.maxy, _CMP_LE_OQ));
  inside = _mm256_and_ps(inside, _mm256_cmp_ps(z, zero, _CMP_GE_OQ));
  inside = _mm256_and_ps(inside, _mm256_cmp_ps(z, g.maxz, _CMP_LE_OQ));
  // Park outside lanes at the origin so every gather index is valid.
  x = _mm256_and_ps(x, inside);
  y = _mm256_and_ps(y, inside);
  z = _mm256_and_ps(z, inside);

  const __m256i one = _mm256_set1_epi32(1);
  const __m256i x0 = _mm256_cvttps_epi32(x);
  const __m256i y0 = _mm256_cvttps_epi32(y);
  const __m256i z0 = _mm256_cvttps_epi32(z);
  const __m256i x1 = _mm256_min_epi32(_mm256_add_epi32(x0, one), g.nxm1);
  const __m256i y1 = _mm256_min_epi32(_mm256_add_epi32(y0, one), g.nym1);
  const __m256i z1 = _mm256_min_epi32(_mm256_add_epi32(z0, one), g.nzm1);
  const __m256 fx = _mm256_sub_ps(x, _mm256_cvtepi32_ps(x0));
  const __m256 fy = _mm256_sub_ps(y, _mm256_cvtepi32_ps(y0));
  const __m256 fz = _mm256_sub_ps(z, _mm256_cvtepi32_ps(z0));

  const __m256i oy0 = _mm256_mullo_epi32(y0, g.sy);
  const __m256i oy1 = _mm256_mullo_epi32(y1, g.sy);
  const __m256i oz0 = _mm256_mullo_epi32(z0, g.sz);
  const __m256i oz1 = _mm256_mullo_epi32(z1, g.sz);
  const __m256i r00 = _mm256_add_epi32(oy0, oz0);
  const __m256i r10 = _mm256_add_epi32(oy1, oz0);
  const __m256i r01 = _mm256_add_epi32(oy0, oz1);
  const __m256i r11 = _mm256_add_epi32(oy1, oz1);

  const float* d = g.data;
  const __m256 c00 = lerp8(gather(d, _mm256_add_epi32(r00, x0)), gather(d, _mm256_add_epi32(r00, x1)), fx);
  const __m256 c10 = lerp8(gather(d, _mm256_add_epi32(r10, x0)), gather(d, _mm256_add_epi32(r10, x1)), fx);
  const __m256 c01 = lerp8(gather(d, _mm256_add_epi32(r01, x0)), gather(d, _mm256_add_epi32(r01, x1)), fx);
  const __m256 c11 = lerp8(gather(d, _mm256_add_epi32(r11, x0)), gather(d, _mm256_add_epi32(r11, x1)), fx);
  const __m256 c0 = lerp8(c00, c10, fy);
  const __m256 c1 = lerp8(c01, c11, fy);
  return _mm256_and_ps(lerp8(c0, c1, fz), inside);
}

struct Sample8 {
  __m256 r, g, b, a;
};

inline Sample8 classify8(const LutView& lut, __m256 s) {
  s = _mm256_min_ps(_mm256_max_ps(s, _mm256_setzero_ps()), _mm256_set1_ps(1.0f));
  const __m256 t = _mm256_mul_ps(s, _mm256_set1_ps(static_cast<float>(lut.size - 1)));
  const __m256i i0 = _mm256_cvttps_epi32(t);
  const __m256i i1 = _mm256_min_epi32(_mm256_add_epi32(i0, _mm256_set1_epi32(1)), _mm256_set1_epi32(lut.size - 1));
  const __m256 f = _mm256_sub_ps(t, _mm256_cvtepi32_ps(i0));
  return {lerp8(gather(lut.r, i0), gather(lut.r, i1), f), lerp8(gather(lut.g, i0), gather(lut.g, i1), f),
          lerp8(gather(lut.b, i0), gather(lut.b, i1), f), lerp8(gather(lut.a, i0), gather(lut.a, i1), f)};
}

inline __m256 headlight8(const Grid8& g, const MarchParams& p, __m256 x, __m256 y, __m256 z, __m256 lx,
                         __m256 ly, __m256 lz) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 gx = _mm256_mul_ps(
      _mm256_sub_ps(trilinear8(g, _mm256_add_ps(x, one), y, z), trilinear8(g, _mm256_sub_ps(x, one), y, z)),
      _mm256_set1_ps(p.gradient_scale[0]));
  const __m256 gy = _mm256_mul_ps(
      _mm256_sub_ps(trilinear8(g, x, _mm256_add_ps(y, one), z), trilinear8(g, x, _mm256_sub_ps(y, one), z)),
      _mm256_set1_ps(p.gradient_scale[1]));
  const __m256 gz = _mm256_mul_ps(
      _mm256_sub_ps(trilinear8(g, x, y, _mm256_add_ps(z, one)), trilinear8(g, x, y, _mm256_sub_ps(z, one))),
      _mm256_set1_ps(p.gradient_scale[2]));
  const __m256 len2 = _mm256_add_ps(_mm256_add_ps(_mm256_mul_ps(gx, gx), _mm256_mul_ps(gy, gy)), _mm256_mul_ps(gz, gz));
  const __m256 d = _mm256_add_ps(_mm256_add_ps(_mm256_mul_ps(gx, lx), _mm256_mul_ps(gy, ly)), _mm256_mul_ps(gz, lz));
  const __m256 abs_d = _mm256_andnot_ps(_mm256_set1_ps(-0.0f), d);
  const __m256 lit = _mm256_max_ps(_mm256_set1_ps(p.ambient), _mm256_div_ps(abs_d, _mm256_sqrt_ps(len2)));
  const __m256 has_gradient = _mm256_cmp_ps(len2, _mm256_setzero_ps(), _CMP_GT_OQ);
  return _mm256_blendv_ps(one, lit, has_gradient);
}

}  // namespace

void march_avx2(const MarchParams& p, const RayBatch& rays, const AccumBatch& out) {
  const Grid8 grid = make_grid(p.volume);
  const __m256 term = _mm256_set1_ps(p.termination_alpha);
  const __m256 one = _mm256_set1_ps(1.0f);

  for (std::size_t base = 0; base < rays.count; base += 8) {
    const std::size_t lanes = std::min<std::size_t>(8, rays.count - base);
    alignas(32) float buf[9][8] = {};
    alignas(32) std::int32_t steps_buf[8] = {};
    const float* src[9] = {rays.ox, rays.oy, rays.oz, rays.dx, rays.dy, rays.dz, rays.lx, rays.ly, rays.lz};
    for (int c = 0; c < 9; ++c) std::copy_n(src[c] + base, lanes, buf[c]);
    std::copy_n(rays.steps + base, lanes, steps_buf);

    const __m256 ox = _mm256_load_ps(buf[0]), oy = _mm256_load_ps(buf[1]), oz = _mm256_load_ps(buf[2]);
    const __m256 dx = _mm256_load_ps(buf[3]), dy = _mm256_load_ps(buf[4]), dz = _mm256_load_ps(buf[5]);
    const __m256 lx = _mm256_load_ps(buf[6]), ly = _mm256_load_ps(buf[7]), lz = _mm256_load_ps(buf[8]);
    const __m256i steps = _mm256_load_si256(reinterpret_cast<const __m256i*>(steps_buf));
    int max_steps = 0;
    for (std::size_t l = 0; l < lanes; ++l) max_steps = std::max(max_steps, steps_buf[l]);

    __m256 ar = _mm256_setzero_ps(), ag = _mm256_setzero_ps(), ab = _mm256_setzero_ps(),
           aa = _mm256_setzero_ps();
    for (int k = 0; k < max_steps; ++k) {
      const __m256 active = _mm256_and_ps(
          _mm256_castsi256_ps(_mm256_cmpgt_epi32(steps, _mm256_set1_epi32(k))),
          _mm256_cmp_ps(aa, term, _CMP_LT_OQ));
      if (_mm256_movemask_ps(active) == 0) break;
      const __m256 fk = _mm256_set1_ps(static_cast<float>(k));
      const __m256 x = _mm256_add_ps(ox, _mm256_mul_ps(fk, dx));
      const __m256 y = _mm256_add_ps(oy, _mm256_mul_ps(fk, dy));
      const __m256 z = _mm256_add_ps(oz, _mm256_mul_ps(fk, dz));
      const Sample8 c = classify8(p.lut, trilinear8(grid, x, y, z));
      const __m256 contributes = _mm256_and_ps(active, _mm256_cmp_ps(c.a, _mm256_setzero_ps(), _CMP_GT_OQ));
      if (_mm256_movemask_ps(contributes) == 0) continue;
      __m256 shade = one;
      if (p.shading) shade = headlight8(grid, p, x, y, z, lx, ly, lz);
      const __m256 w = _mm256_and_ps(_mm256_mul_ps(_mm256_sub_ps(one, aa), c.a), contributes);
      ar = _mm256_add_ps(ar, _mm256_mul_ps(w, _mm256_mul_ps(c.r, shade)));
      ag = _mm256_add_ps(ag, _mm256_mul_ps(w, _mm256_mul_ps(c.g, shade)));
      ab = _mm256_add_ps(ab, _mm256_mul_ps(w, _mm256_mul_ps(c.b, shade)));
      aa = _mm256_add_ps(aa, w);
    }

    alignas(32) float res[4][8];
    _mm256_store_ps(res[0], ar);
    _mm256_store_ps(res[1], ag);
    _mm256_store_ps(res[2], ab);
    _mm256_store_ps(res[3], aa);
    std::copy_n(res[0], lanes, out.r + base);
    std::copy_n(res[1], lanes, out.g + base);
    std::copy_n(res[2], lanes, out.b + base);
    std::copy_n(res[3], lanes, out.a + base);
  }
}

}  // namespace tfevolve::kernels
