#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "tfevolve/error.hpp"
#include "tfevolve/evaluator.hpp"
#include "tfevolve/image.hpp"

namespace testing {

// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tfevolve-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

// Code of the tfevolve::Error thrown by `fn`, or nullopt when none is thrown.
template <class F>
std::optional<tfevolve::ErrorCode> error_code(F&& fn) {
  try {
    fn();
  } catch (const tfevolve::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// A 2x2 image carrying `score` in its first pixel, for scripted judges.
inline tfevolve::RenderedImage score_image(std::uint32_t score) {
  tfevolve::RenderedImage img(2, 2);
  std::memcpy(img.pixels.data(), &score, sizeof score);
  return img;
}

inline std::uint32_t image_score(const tfevolve::RenderedImage& img) {
  std::uint32_t score = 0;
  std::memcpy(&score, img.pixels.data(), sizeof score);
  return score;
}

// Prefers the image with the larger embedded score (or the smaller when
// inverted) on every aspect; equal scores tie.
class OrderJudge : public tfevolve::Judge {
 public:
  explicit OrderJudge(bool inverted = false) : inverted_(inverted) {}

  tfevolve::ComparisonResult compare(const tfevolve::RenderedImage& a, const tfevolve::RenderedImage& b,
                                     std::span<const tfevolve::Aspect> aspects, const tfevolve::Intent&) override {
    ++calls;
    std::uint32_t sa = image_score(a), sb = image_score(b);
    tfevolve::Winner w = sa == sb ? tfevolve::Winner::Tie
                                  : ((sa > sb) != inverted_ ? tfevolve::Winner::A : tfevolve::Winner::B);
    tfevolve::ComparisonResult r;
    for (const auto& aspect : aspects) r.per_aspect[aspect.id] = w;
    r.overall = w;
    return r;
  }
  bool concurrent() const override { return true; }
  std::string name() const override { return "order"; }

  std::atomic<int> calls{0};

 private:
  bool inverted_;
};

class ConstantJudge : public tfevolve::Judge {
 public:
  explicit ConstantJudge(tfevolve::Winner w) : w_(w) {}
  tfevolve::ComparisonResult compare(const tfevolve::RenderedImage&, const tfevolve::RenderedImage&,
                                     std::span<const tfevolve::Aspect> aspects, const tfevolve::Intent&) override {
    ++calls;
    tfevolve::ComparisonResult r;
    for (const auto& aspect : aspects) r.per_aspect[aspect.id] = w_;
    r.overall = w_;
    return r;
  }
  std::string name() const override { return "constant"; }

  std::atomic<int> calls{0};

 private:
  tfevolve::Winner w_;
};

}  // namespace testing
