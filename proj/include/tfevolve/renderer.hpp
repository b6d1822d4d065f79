#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "tfevolve/genome.hpp"
#include "tfevolve/image.hpp"
#include "tfevolve/volume.hpp"

namespace tfevolve {

using Vec3 = std::array<double, 3>;

enum class Projection { perspective, orthographic };

struct Camera {
  Vec3 position{0.0, 0.0, 3.0};
  Vec3 target{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double vertical_fov = 40.0;  // degrees; for orthographic, sets the view height at the target
  Projection projection = Projection::perspective;
};

void validate(const Camera& camera);

// Orbit around the volume centre. `distance` is in multiples of the volume's
// bounding-sphere radius; angles are in degrees.
Camera orbit_camera(const VolumeDataset& volume, double yaw_deg, double pitch_deg, double distance,
                    double vertical_fov = 40.0);

// Fixed three-quarter view used for pose-controlled comparisons.
Camera default_camera(const VolumeDataset& volume);

enum class Shading { none, lambert };

struct RenderSettings {
  double step_world = 0.0;  // 0 selects the volume's minimum spacing
  Rgb background{0.1, 0.1, 0.1};
  Shading shading = Shading::lambert;
  double early_termination_alpha = 0.99;
  int workers = 0;  // 0 selects std::thread::hardware_concurrency()
};

void validate(const RenderSettings& settings);

// Front-to-back accumulation before the background is applied.
struct AccumulationBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> r, g, b, a;
};

AccumulationBuffer render_accumulation(const VolumeDataset& volume, const TransferFunctionLUT& lut,
                                       const Camera& camera, const RenderSettings& settings, int width,
                                       int height);

RenderedImage render(const VolumeDataset& volume, const TransferFunctionLUT& lut, const Camera& camera,
                     const RenderSettings& settings, int width, int height);

// Index of the gene with the greatest accumulated visibility along the ray
// through pixel (x, y). Throws not_found when nothing visible is hit.
std::size_t pick_feature(const VolumeDataset& volume, const Genome& genome, const Camera& camera,
                         const RenderSettings& settings, int width, int height, int x, int y);

// Per-gene visibility along the pixel's ray (exposed for inspection and tests).
std::vector<double> feature_visibility(const VolumeDataset& volume, const Genome& genome, const Camera& camera,
                                       const RenderSettings& settings, int width, int height, int x, int y);

RenderedImage render_feature_isolation(const VolumeDataset& volume, const Genome& genome, std::size_t gene_index,
                                       const Camera& camera, const RenderSettings& settings, int width,
                                       int height);

}  // namespace tfevolve
