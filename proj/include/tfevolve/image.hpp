#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tfevolve {

// RGBA8, row-major, top row first.
struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RenderedImage() = default;
  RenderedImage(int w, int h);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* at(int x, int y) { return pixels.data() + 4 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 4 * (static_cast<std::size_t>(y) * width + x);
  }

  friend bool operator==(const RenderedImage&, const RenderedImage&) = default;
};

std::string encode_png(const RenderedImage& image);
RenderedImage decode_png(std::string_view bytes);

void write_png(const RenderedImage& image, const std::filesystem::path& path);
RenderedImage read_png(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace tfevolve
