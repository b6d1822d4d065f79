#include <algorithm>
#include <cmath>

#include "tfevolve/kernels/march.hpp"

namespace tfevolve::kernels {
namespace {

struct Sample {
  float r, g, b, a;
};

inline Sample classify(const LutView& lut, float s) {
  s = std::min(std::max(s, 0.0f), 1.0f);
  const float t = s * static_cast<float>(lut.size - 1);
  const int i0 = static_cast<int>(t);
  const int i1 = i0 + 1 < lut.size ? i0 + 1 : lut.size - 1;
  const float f = t - static_cast<float>(i0);
  return {lerp(lut.r[i0], lut.r[i1], f), lerp(lut.g[i0], lut.g[i1], f),
          lerp(lut.b[i0], lut.b[i1], f), lerp(lut.a[i0], lut.a[i1], f)};
}

inline float headlight(const MarchParams& p, float x, float y, float z, float lx, float ly,
                       float lz) {
  const VolumeView& v = p.volume;
  const float gx = (trilinear(v, x + 1.0f, y, z) - trilinear(v, x - 1.0f, y, z)) * p.gradient_scale[0];
  const float gy = (trilinear(v, x, y + 1.0f, z) - trilinear(v, x, y - 1.0f, z)) * p.gradient_scale[1];
  const float gz = (trilinear(v, x, y, z + 1.0f) - trilinear(v, x, y, z - 1.0f)) * p.gradient_scale[2];
  const float len2 = gx * gx + gy * gy + gz * gz;
  if (!(len2 > 0.0f)) return 1.0f;
  const float d = gx * lx + gy * ly + gz * lz;
  return std::max(p.ambient, std::fabs(d) / std::sqrt(len2));
}

}  // namespace

void march_scalar(const MarchParams& p, const RayBatch& rays, const AccumBatch& out) {
  for (std::size_t i = 0; i < rays.count; ++i) {
    float ar = 0.0f, ag = 0.0f, ab = 0.0f, aa = 0.0f;
    const int steps = rays.steps[i];
    for (int k = 0; k < steps && aa < p.termination_alpha; ++k) {
      const float fk = static_cast<float>(k);
      const float x = rays.ox[i] + fk * rays.dx[i];
      const float y = rays.oy[i] + fk * rays.dy[i];
      const float z = rays.oz[i] + fk * rays.dz[i];
      const Sample c = classify(p.lut, trilinear(p.volume, x, y, z));
      if (!(c.a > 0.0f)) continue;
      float shade = 1.0f;
      if (p.shading) shade = headlight(p, x, y, z, rays.lx[i], rays.ly[i], rays.lz[i]);
      const float w = (1.0f - aa) * c.a;
      ar = ar + w * (c.r * shade);
      ag = ag + w * (c.g * shade);
      ab = ab + w * (c.b * shade);
      aa = aa + w;
    }
    out.r[i] = ar;
    out.g[i] = ag;
    out.b[i] = ab;
    out.a[i] = aa;
  }
}

}  // namespace tfevolve::kernels
