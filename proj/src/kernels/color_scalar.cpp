#include <algorithm>

#include "tfevolve/kernels/color.hpp"

namespace tfevolve::kernels {

void rgba_to_hsvl_scalar(const std::uint8_t* rgba, std::size_t pixels, const ColorPlanes& out) {
  for (std::size_t i = 0; i < pixels; ++i) {
    const float r = static_cast<float>(rgba[4 * i + 0]) / 255.0f;
    const float g = static_cast<float>(rgba[4 * i + 1]) / 255.0f;
    const float b = static_cast<float>(rgba[4 * i + 2]) / 255.0f;
    const float mx = std::max(r, std::max(g, b));
    const float mn = std::min(r, std::min(g, b));
    const float delta = mx - mn;
    float h = 0.0f;
    if (delta > 0.0f) {
      if (mx == r) {
        h = 60.0f * ((g - b) / delta);
      } else if (mx == g) {
        h = 60.0f * ((b - r) / delta + 2.0f);
      } else {
        h = 60.0f * ((r - g) / delta + 4.0f);
      }
      if (h < 0.0f) h = h + 360.0f;
    }
    out.hue[i] = h;
    out.saturation[i] = mx > 0.0f ? delta / mx : 0.0f;
    out.value[i] = mx;
    out.luma[i] = 0.2126f * r + 0.7152f * g + 0.0722f * b;
  }
}

}  // namespace tfevolve::kernels
