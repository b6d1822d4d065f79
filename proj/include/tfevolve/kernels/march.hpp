#pragma once

#include <cstddef>
#include <cstdint>

namespace tfevolve::kernels {

struct VolumeView {
  const float* data = nullptr;
  int nx = 0, ny = 0, nz = 0;
};

inline float lerp(float a, float b, float t) { return a + t * (b - a); }

// Reference trilinear reconstruction shared by the volume module and the
// scalar kernel. Out-of-range (or NaN) coordinates read as 0.
inline float trilinear(const VolumeView& v, float x, float y, float z) {
  if (!(x >= 0.0f && y >= 0.0f && z >= 0.0f && x <= static_cast<float>(v.nx - 1) &&
        y <= static_cast<float>(v.ny - 1) && z <= static_cast<float>(v.nz - 1))) {
    return 0.0f;
  }
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int z0 = static_cast<int>(z);
  const int x1 = x0 + 1 < v.nx ? x0 + 1 : v.nx - 1;
  const int y1 = y0 + 1 < v.ny ? y0 + 1 : v.ny - 1;
  const int z1 = z0 + 1 < v.nz ? z0 + 1 : v.nz - 1;
  const float fx = x - static_cast<float>(x0);
  const float fy = y - static_cast<float>(y0);
  const float fz = z - static_cast<float>(z0);
  const int sy = v.nx;
  const int sz = v.nx * v.ny;
  const float* d = v.data;
  const int r00 = y0 * sy + z0 * sz;
  const int r10 = y1 * sy + z0 * sz;
  const int r01 = y0 * sy + z1 * sz;
  const int r11 = y1 * sy + z1 * sz;
  const float c00 = lerp(d[r00 + x0], d[r00 + x1], fx);
  const float c10 = lerp(d[r10 + x0], d[r10 + x1], fx);
  const float c01 = lerp(d[r01 + x0], d[r01 + x1], fx);
  const float c11 = lerp(d[r11 + x0], d[r11 + x1], fx);
  const float c0 = lerp(c00, c10, fy);
  const float c1 = lerp(c01, c11, fy);
  return lerp(c0, c1, fz);
}

// Baked transfer function, structure of arrays. Alpha is already
// opacity-corrected for the step size in use.
struct LutView {
  const float* r = nullptr;
  const float* g = nullptr;
  const float* b = nullptr;
  const float* a = nullptr;
  int size = 0;
};

struct MarchParams {
  VolumeView volume;
  LutView lut;
  bool shading = true;
  float termination_alpha = 0.99f;
  // Converts a +-1 voxel central difference into a world-space gradient.
  float gradient_scale[3] = {0.5f, 0.5f, 0.5f};
  float ambient = 0.2f;
};

// Rays in grid space, structure of arrays. Sample k of ray i sits at
// origin_i + k * step_i; `light` is the unit headlight direction in world space.
struct RayBatch {
  const float* ox = nullptr;
  const float* oy = nullptr;
  const float* oz = nullptr;
  const float* dx = nullptr;
  const float* dy = nullptr;
  const float* dz = nullptr;
  const float* lx = nullptr;
  const float* ly = nullptr;
  const float* lz = nullptr;
  const std::int32_t* steps = nullptr;
  std::size_t count = 0;
};

// Premultiplied color and opacity accumulated front to back, before the
// background is composited.
struct AccumBatch {
  float* r = nullptr;
  float* g = nullptr;
  float* b = nullptr;
  float* a = nullptr;
};

void march_scalar(const MarchParams& params, const RayBatch& rays, const AccumBatch& out);
#if defined(TFEVOLVE_HAVE_AVX2)
void march_avx2(const MarchParams& params, const RayBatch& rays, const AccumBatch& out);
#endif

// Dispatches on active_isa().
void march(const MarchParams& params, const RayBatch& rays, const AccumBatch& out);

}  // namespace tfevolve::kernels
