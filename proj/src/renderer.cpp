#include "tfevolve/renderer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "tfevolve/error.hpp"
#include "tfevolve/kernels/march.hpp"

namespace tfevolve {
namespace {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double length(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalize(const Vec3& a) { return (1.0 / length(a)) * a; }

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

Vec3 half_extent(const VolumeDataset& volume) {
  Vec3 h;
  for (int i = 0; i < 3; ++i) h[i] = 0.5 * (volume.dims()[i] - 1) * volume.spacing()[i];
  return h;
}

double step_of(const VolumeDataset& volume, const RenderSettings& settings) {
  return settings.step_world > 0.0 ? settings.step_world : volume.min_spacing();
}

struct WorldRay {
  Vec3 origin;
  Vec3 dir;
};

// Pixel centres map to rays; y grows downward in the image.
class RayGenerator {
 public:
  RayGenerator(const Camera& camera, int width, int height) : camera_(camera), width_(width), height_(height) {
    validate(camera);
    if (width <= 0 || height <= 0) throw bad_request("image size must be positive");
    forward_ = normalize(camera.target - camera.position);
    right_ = normalize(cross(forward_, camera.up));
    up_ = cross(right_, forward_);
    tan_half_ = std::tan(radians(camera.vertical_fov) / 2.0);
    aspect_ = static_cast<double>(width) / height;
    distance_ = length(camera.target - camera.position);
  }

  WorldRay ray(int px, int py) const {
    const double u = (2.0 * (px + 0.5) / width_ - 1.0) * aspect_;
    const double v = 1.0 - 2.0 * (py + 0.5) / height_;
    if (camera_.projection == Projection::orthographic) {
      const double half = distance_ * tan_half_;
      return {camera_.position + (u * half) * right_ + (v * half) * up_, forward_};
    }
    return {camera_.position, normalize(forward_ + (u * tan_half_) * right_ + (v * tan_half_) * up_)};
  }

 private:
  Camera camera_;
  int width_, height_;
  Vec3 forward_, right_, up_;
  double tan_half_ = 1.0, aspect_ = 1.0, distance_ = 1.0;
};

// Ray/box clip, then sample positions at t0 + (k + 1/2) * step for k < steps.
struct GridRay {
  std::array<float, 3> origin{};
  std::array<float, 3> delta{};
  std::array<float, 3> light{};
  int steps = 0;
};

GridRay clip_to_volume(const WorldRay& ray, const Vec3& half, const std::array<double, 3>& spacing, double step) {
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(ray.dir[i]) < 1e-12) {
      if (ray.origin[i] < -half[i] || ray.origin[i] > half[i]) return {};
      continue;
    }
    double t1 = (-half[i] - ray.origin[i]) / ray.dir[i];
    double t2 = (half[i] - ray.origin[i]) / ray.dir[i];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  GridRay g;
  for (int i = 0; i < 3; ++i) g.light[i] = static_cast<float>(-ray.dir[i]);
  if (!(t_far > t_near)) return g;
  g.steps = static_cast<int>(std::floor((t_far - t_near) / step));
  const double t0 = t_near + 0.5 * step;
  for (int i = 0; i < 3; ++i) {
    g.origin[i] = static_cast<float>((ray.origin[i] + t0 * ray.dir[i] + half[i]) / spacing[i]);
    g.delta[i] = static_cast<float>(step * ray.dir[i] / spacing[i]);
  }
  return g;
}

// LUT in structure-of-arrays form with opacity corrected for the step size.
struct CorrectedLut {
  std::vector<float> r, g, b, a;
  kernels::LutView view() const { return {r.data(), g.data(), b.data(), a.data(), static_cast<int>(a.size())}; }
};

CorrectedLut correct_lut(const TransferFunctionLUT& lut, double step_ratio) {
  if (lut.resolution() < 2) throw bad_request("LUT resolution must be >= 2");
  CorrectedLut out;
  const auto n = static_cast<std::size_t>(lut.resolution());
  out.r.resize(n);
  out.g.resize(n);
  out.b.resize(n);
  out.a.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const LutEntry& e = lut.entries[k];
    out.r[k] = static_cast<float>(e.color[0]);
    out.g[k] = static_cast<float>(e.color[1]);
    out.b[k] = static_cast<float>(e.color[2]);
    const double alpha = std::clamp(e.opacity, 0.0, 1.0);
    out.a[k] = static_cast<float>(step_ratio == 1.0 ? alpha : 1.0 - std::pow(1.0 - alpha, step_ratio));
  }
  return out;
}

kernels::MarchParams march_params(const VolumeDataset& volume, const CorrectedLut& lut,
                                  const RenderSettings& settings) {
  kernels::MarchParams p;
  const auto& d = volume.dims();
  p.volume = {volume.values().data(), d[0], d[1], d[2]};
  p.lut = lut.view();
  p.shading = settings.shading == Shading::lambert;
  p.termination_alpha = static_cast<float>(settings.early_termination_alpha);
  for (int i = 0; i < 3; ++i) p.gradient_scale[i] = static_cast<float>(1.0 / (2.0 * volume.spacing()[i]));
  return p;
}

int worker_count(const RenderSettings& settings, int rows) {
  int n = settings.workers > 0 ? settings.workers : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(rows, 1));
}

}  // namespace

void validate(const Camera& camera) {
  const Vec3 view = camera.target - camera.position;
  if (length(view) < 1e-12) throw bad_request("camera position equals target");
  if (length(cross(normalize(view), camera.up)) < 1e-9) throw bad_request("camera up is parallel to view");
  if (!(camera.vertical_fov > 0.0 && camera.vertical_fov < 180.0)) throw bad_request("vertical_fov must be in (0,180)");
}

void validate(const RenderSettings& settings) {
  if (settings.step_world < 0.0 || !std::isfinite(settings.step_world)) throw bad_request("step_world must be > 0");
  if (!(settings.early_termination_alpha > 0.0 && settings.early_termination_alpha <= 1.0)) {
    throw bad_request("early_termination_alpha must be in (0,1]");
  }
}

Camera orbit_camera(const VolumeDataset& volume, double yaw_deg, double pitch_deg, double distance,
                    double vertical_fov) {
  if (!(distance > 0.0)) throw bad_request("camera distance must be positive");
  pitch_deg = std::clamp(pitch_deg, -89.0, 89.0);
  const double radius = std::max(length(half_extent(volume)), 1e-6);
  const double yaw = radians(yaw_deg);
  const double pitch = radians(pitch_deg);
  Camera c;
  c.target = {0.0, 0.0, 0.0};
  c.position = {distance * radius * std::cos(pitch) * std::sin(yaw), distance * radius * std::sin(pitch),
                distance * radius * std::cos(pitch) * std::cos(yaw)};
  c.up = {0.0, 1.0, 0.0};
  c.vertical_fov = vertical_fov;
  return c;
}

Camera default_camera(const VolumeDataset& volume) { return orbit_camera(volume, 35.0, 25.0, 3.0); }

AccumulationBuffer render_accumulation(const VolumeDataset& volume, const TransferFunctionLUT& lut,
                                       const Camera& camera, const RenderSettings& settings, int width,
                                       int height) {
  validate(settings);
  const RayGenerator rays(camera, width, height);
  const double step = step_of(volume, settings);
  const CorrectedLut corrected = correct_lut(lut, step / volume.min_spacing());
  const kernels::MarchParams params = march_params(volume, corrected, settings);
  const Vec3 half = half_extent(volume);

  AccumulationBuffer out;
  out.width = width;
  out.height = height;
  const auto n = static_cast<std::size_t>(width) * height;
  out.r.resize(n);
  out.g.resize(n);
  out.b.resize(n);
  out.a.resize(n);

  // Rows are independent, so the result does not depend on the worker count.
  const auto render_row = [&](int y, std::vector<float>& soa, std::vector<std::int32_t>& steps) {
    const auto w = static_cast<std::size_t>(width);
    float* plane[9];
    for (int c = 0; c < 9; ++c) plane[c] = soa.data() + c * w;
    for (int x = 0; x < width; ++x) {
      const GridRay g = clip_to_volume(rays.ray(x, y), half, volume.spacing(), step);
      for (int c = 0; c < 3; ++c) {
        plane[c][x] = g.origin[static_cast<std::size_t>(c)];
        plane[3 + c][x] = g.delta[static_cast<std::size_t>(c)];
        plane[6 + c][x] = g.light[static_cast<std::size_t>(c)];
      }
      steps[static_cast<std::size_t>(x)] = g.steps;
    }
    const kernels::RayBatch batch{plane[0], plane[1], plane[2], plane[3], plane[4], plane[5],
                                  plane[6], plane[7], plane[8], steps.data(), w};
    const std::size_t row = static_cast<std::size_t>(y) * w;
    kernels::march(params, batch, {out.r.data() + row, out.g.data() + row, out.b.data() + row, out.a.data() + row});
  };

  std::atomic<int> next_row{0};
  const auto worker = [&] {
    std::vector<float> soa(9 * static_cast<std::size_t>(width));
    std::vector<std::int32_t> steps(static_cast<std::size_t>(width));
    for (int y = next_row++; y < height; y = next_row++) render_row(y, soa, steps);
  };
  const int workers = worker_count(settings, height);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  return out;
}

RenderedImage render(const VolumeDataset& volume, const TransferFunctionLUT& lut, const Camera& camera,
                     const RenderSettings& settings, int width, int height) {
  const AccumulationBuffer acc = render_accumulation(volume, lut, camera, settings, width, height);
  RenderedImage image(width, height);
  const auto to_byte = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  const auto& bg = settings.background;
  for (std::size_t i = 0; i < acc.a.size(); ++i) {
    const double t = 1.0 - static_cast<double>(acc.a[i]);
    std::uint8_t* px = image.pixels.data() + 4 * i;
    px[0] = to_byte(acc.r[i] + t * bg[0]);
    px[1] = to_byte(acc.g[i] + t * bg[1]);
    px[2] = to_byte(acc.b[i] + t * bg[2]);
    px[3] = 255;
  }
  return image;
}

std::vector<double> feature_visibility(const VolumeDataset& volume, const Genome& genome, const Camera& camera,
                                       const RenderSettings& settings, int width, int height, int x, int y) {
  validate(settings);
  validate(genome);
  if (x < 0 || y < 0 || x >= width || y >= height) throw bad_request("pixel outside image");
  const RayGenerator rays(camera, width, height);
  const double step = step_of(volume, settings);
  const GridRay g = clip_to_volume(rays.ray(x, y), half_extent(volume), volume.spacing(), step);
  const CorrectedLut lut = correct_lut(bake_lut(genome), step / volume.min_spacing());
  const auto& d = volume.dims();
  const kernels::VolumeView view{volume.values().data(), d[0], d[1], d[2]};

  std::vector<double> visibility(genome.genes.size(), 0.0);
  std::vector<double> contribution(genome.genes.size(), 0.0);
  double transmittance = 1.0;
  for (int k = 0; k < g.steps && 1.0 - transmittance < settings.early_termination_alpha; ++k) {
    const float fk = static_cast<float>(k);
    const float s = kernels::trilinear(view, g.origin[0] + fk * g.delta[0], g.origin[1] + fk * g.delta[1],
                                       g.origin[2] + fk * g.delta[2]);
    const float t = std::clamp(s, 0.0f, 1.0f) * static_cast<float>(lut.a.size() - 1);
    const auto i0 = static_cast<std::size_t>(t);
    const std::size_t i1 = std::min(i0 + 1, lut.a.size() - 1);
    const double alpha = kernels::lerp(lut.a[i0], lut.a[i1], t - static_cast<float>(i0));
    if (!(alpha > 0.0)) continue;
    double total = 0.0;
    for (std::size_t i = 0; i < genome.genes.size(); ++i) {
      contribution[i] = genome.genes[i].contribution(s);
      total += contribution[i];
    }
    if (total > 0.0) {
      for (std::size_t i = 0; i < genome.genes.size(); ++i) {
        visibility[i] += transmittance * (contribution[i] / total) * alpha;
      }
    }
    transmittance *= 1.0 - alpha;
  }
  return visibility;
}

std::size_t pick_feature(const VolumeDataset& volume, const Genome& genome, const Camera& camera,
                         const RenderSettings& settings, int width, int height, int x, int y) {
  const auto visibility = feature_visibility(volume, genome, camera, settings, width, height, x, y);
  double total = 0.0;
  for (double v : visibility) total += v;
  if (total < 1e-4) throw not_found("no feature under cursor");
  // max_element keeps the first of equal maxima, i.e. the lowest index.
  return static_cast<std::size_t>(std::max_element(visibility.begin(), visibility.end()) - visibility.begin());
}

RenderedImage render_feature_isolation(const VolumeDataset& volume, const Genome& genome, std::size_t gene_index,
                                       const Camera& camera, const RenderSettings& settings, int width,
                                       int height) {
  return render(volume, bake_lut(isolate_gene(genome, gene_index)), camera, settings, width, height);
}

}  // namespace tfevolve
