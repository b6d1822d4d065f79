#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tfevolve {

enum class ScalarKind { u8, u16 };
enum class Endianness { little, big };

struct VolumeDescriptor {
  std::array<int, 3> dims{2, 2, 2};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  ScalarKind scalar_kind = ScalarKind::u8;
  Endianness endianness = Endianness::little;
  std::string data_path;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t bytes_per_scalar() const { return scalar_kind == ScalarKind::u8 ? 1 : 2; }
  std::size_t payload_bytes() const { return voxel_count() * bytes_per_scalar(); }
};

// Throws bad_request when dims < 2 or spacing <= 0.
void validate(const VolumeDescriptor& descriptor);

VolumeDescriptor parse_descriptor(const std::string& json_text);
std::string descriptor_to_json(const VolumeDescriptor& descriptor);

// Immutable after construction. Values are normalized to [0, 1], x fastest.
class VolumeDataset {
 public:
  VolumeDataset(VolumeDescriptor descriptor, std::vector<float> values, double raw_min,
                double raw_max);

  const VolumeDescriptor& descriptor() const { return descriptor_; }
  const std::array<int, 3>& dims() const { return descriptor_.dims; }
  const std::array<double, 3>& spacing() const { return descriptor_.spacing; }
  std::span<const float> values() const { return values_; }
  double raw_min() const { return raw_min_; }
  double raw_max() const { return raw_max_; }

  float at(int x, int y, int z) const {
    return values_[static_cast<std::size_t>(x) +
                   static_cast<std::size_t>(descriptor_.dims[0]) *
                       (static_cast<std::size_t>(y) +
                        static_cast<std::size_t>(descriptor_.dims[1]) * z)];
  }

  double min_spacing() const;

 private:
  VolumeDescriptor descriptor_;
  std::vector<float> values_;
  double raw_min_;
  double raw_max_;
};

VolumeDataset load_raw(const std::filesystem::path& descriptor_path);

// Writes `<stem>.json` + `<stem>.raw` next to each other using the dataset's
// scalar kind and raw extrema, so a loaded dataset reloads bit-identically.
void write_raw(const VolumeDataset& dataset, const std::filesystem::path& descriptor_path);

// Trilinear reconstruction at a continuous grid coordinate. Coordinates
// outside [0, dim-1] on any axis read as empty space (0).
float sample(const VolumeDataset& dataset, const std::array<float, 3>& p);

std::vector<std::size_t> histogram(const VolumeDataset& dataset, int bins);

enum class SyntheticKind { nested_spheres, slab_stack, ramp };

SyntheticKind parse_synthetic_kind(const std::string& name);

// Shell levels of nested_spheres, innermost last.
inline constexpr std::array<float, 3> kShellLevels{0.25f, 0.55f, 0.85f};
// Slab levels of slab_stack, ordered along +z.
inline constexpr std::array<float, 4> kSlabLevels{0.2f, 0.4f, 0.6f, 0.8f};

VolumeDataset make_synthetic(SyntheticKind kind, const std::array<int, 3>& dims);

// Resolves a volume reference: a descriptor path, or `synthetic:<kind>:<n>`
// (cube of side n) / `synthetic:<kind>:<nx>x<ny>x<nz>`.
VolumeDataset open_volume(const std::string& reference);

// Multi-line human-readable summary for `volume info`.
std::string describe(const VolumeDataset& dataset, int histogram_bins = 16);

}  // namespace tfevolve
