#include "tfevolve/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <json.hpp>
#include <sstream>

#include "tfevolve/error.hpp"
#include "tfevolve/kernels/march.hpp"

namespace tfevolve {

using nlohmann::json;

void validate(const VolumeDescriptor& d) {
  for (int axis = 0; axis < 3; ++axis) {
    if (d.dims[axis] < 2) throw bad_request("volume dims must be >= 2 on every axis");
    if (!(d.spacing[axis] > 0.0) || !std::isfinite(d.spacing[axis])) {
      throw bad_request("volume spacing must be positive");
    }
  }
  if (d.voxel_count() > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    throw bad_request("volume too large");
  }
}

VolumeDescriptor parse_descriptor(const std::string& json_text) {
  VolumeDescriptor d;
  try {
    const json j = json::parse(json_text);
    d.dims = j.at("dims").get<std::array<int, 3>>();
    d.spacing = j.at("spacing").get<std::array<double, 3>>();
    const auto kind = j.at("scalar_kind").get<std::string>();
    if (kind == "u8") {
      d.scalar_kind = ScalarKind::u8;
    } else if (kind == "u16") {
      d.scalar_kind = ScalarKind::u16;
    } else {
      throw bad_request("unsupported scalar_kind: " + kind);
    }
    const auto endian = j.value("endianness", std::string("little"));
    if (endian == "little") {
      d.endianness = Endianness::little;
    } else if (endian == "big") {
      d.endianness = Endianness::big;
    } else {
      throw bad_request("unsupported endianness: " + endian);
    }
    d.data_path = j.at("data_path").get<std::string>();
  } catch (const json::exception& e) {
    throw bad_request("unparseable volume descriptor", e.what());
  }
  validate(d);
  return d;
}

std::string descriptor_to_json(const VolumeDescriptor& d) {
  json j;
  j["dims"] = d.dims;
  j["spacing"] = d.spacing;
  j["scalar_kind"] = d.scalar_kind == ScalarKind::u8 ? "u8" : "u16";
  j["endianness"] = d.endianness == Endianness::little ? "little" : "big";
  j["data_path"] = d.data_path;
  return j.dump(2);
}

VolumeDataset::VolumeDataset(VolumeDescriptor descriptor, std::vector<float> values, double raw_min,
                             double raw_max)
    : descriptor_(std::move(descriptor)), values_(std::move(values)), raw_min_(raw_min), raw_max_(raw_max) {
  for (int axis = 0; axis < 3; ++axis) {
    if (descriptor_.dims[axis] < 1) throw bad_request("volume dims must be positive");
    if (!(descriptor_.spacing[axis] > 0.0)) throw bad_request("volume spacing must be positive");
  }
  if (values_.size() != descriptor_.voxel_count()) throw bad_request("value count does not match dims");
  if (!(raw_min_ <= raw_max_)) throw bad_request("raw_min exceeds raw_max");
  for (float v : values_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw bad_request("volume values must lie in [0,1]");
  }
}

double VolumeDataset::min_spacing() const {
  return std::min({descriptor_.spacing[0], descriptor_.spacing[1], descriptor_.spacing[2]});
}

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw not_found("cannot open file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path payload_path(const std::filesystem::path& descriptor_path, const VolumeDescriptor& d) {
  const std::filesystem::path data(d.data_path);
  return data.is_absolute() ? data : descriptor_path.parent_path() / data;
}

}  // namespace

VolumeDataset load_raw(const std::filesystem::path& descriptor_path) {
  const auto text = read_file(descriptor_path);
  const VolumeDescriptor d = parse_descriptor(std::string(text.begin(), text.end()));
  const auto bytes = read_file(payload_path(descriptor_path, d));
  if (bytes.size() != d.payload_bytes()) {
    throw bad_request("volume payload size mismatch",
                      "expected " + std::to_string(d.payload_bytes()) + " bytes, found " +
                          std::to_string(bytes.size()));
  }

  const std::size_t n = d.voxel_count();
  std::vector<std::uint32_t> raw(n);
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (d.scalar_kind == ScalarKind::u8) {
    std::copy(b, b + n, raw.begin());
  } else {
    const bool little = d.endianness == Endianness::little;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t lo = little ? b[2 * i] : b[2 * i + 1];
      const std::uint32_t hi = little ? b[2 * i + 1] : b[2 * i];
      raw[i] = lo | (hi << 8);
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double raw_min = *lo_it;
  const double raw_max = *hi_it;
  std::vector<float> values(n, 0.0f);
  if (raw_max > raw_min) {
    const double range = raw_max - raw_min;
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>((raw[i] - raw_min) / range);
  }
  return VolumeDataset(d, std::move(values), raw_min, raw_max);
}

void write_raw(const VolumeDataset& dataset, const std::filesystem::path& descriptor_path) {
  VolumeDescriptor d = dataset.descriptor();
  validate(d);
  std::filesystem::path raw_path = descriptor_path;
  raw_path.replace_extension(".raw");
  d.data_path = raw_path.filename().string();

  const double max_code = d.scalar_kind == ScalarKind::u8 ? 255.0 : 65535.0;
  const double range = dataset.raw_max() - dataset.raw_min();
  std::string payload;
  payload.reserve(d.payload_bytes());
  for (float v : dataset.values()) {
    const double code = std::clamp(std::round(dataset.raw_min() + static_cast<double>(v) * range), 0.0, max_code);
    const auto c = static_cast<std::uint32_t>(code);
    if (d.scalar_kind == ScalarKind::u8) {
      payload.push_back(static_cast<char>(c));
    } else if (d.endianness == Endianness::little) {
      payload.push_back(static_cast<char>(c & 0xFF));
      payload.push_back(static_cast<char>(c >> 8));
    } else {
      payload.push_back(static_cast<char>(c >> 8));
      payload.push_back(static_cast<char>(c & 0xFF));
    }
  }
  std::ofstream(raw_path, std::ios::binary).write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::ofstream(descriptor_path) << descriptor_to_json(d) << '\n';
}

float sample(const VolumeDataset& dataset, const std::array<float, 3>& p) {
  const auto& dims = dataset.dims();
  const kernels::VolumeView view{dataset.values().data(), dims[0], dims[1], dims[2]};
  return kernels::trilinear(view, p[0], p[1], p[2]);
}

std::vector<std::size_t> histogram(const VolumeDataset& dataset, int bins) {
  if (bins < 1) throw bad_request("histogram needs at least one bin");
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (float v : dataset.values()) {
    const int bin = std::min(static_cast<int>(v * static_cast<float>(bins)), bins - 1);
    ++counts[static_cast<std::size_t>(std::max(bin, 0))];
  }
  return counts;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "nested_spheres") return SyntheticKind::nested_spheres;
  if (name == "slab_stack") return SyntheticKind::slab_stack;
  if (name == "ramp") return SyntheticKind::ramp;
  throw bad_request("unknown synthetic volume: " + name);
}

VolumeDataset make_synthetic(SyntheticKind kind, const std::array<int, 3>& dims) {
  VolumeDescriptor d;
  d.dims = dims;
  d.scalar_kind = ScalarKind::u16;
  for (int axis = 0; axis < 3; ++axis) {
    if (dims[axis] < 1) throw bad_request("synthetic dims must be positive");
  }
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  std::vector<float> values(d.voxel_count(), 0.0f);
  std::size_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x, ++i) {
        switch (kind) {
          case SyntheticKind::ramp:
            values[i] = nx > 1 ? static_cast<float>(static_cast<double>(x) / (nx - 1)) : 0.0f;
            break;
          case SyntheticKind::slab_stack:
            values[i] = kSlabLevels[static_cast<std::size_t>(
                std::min<long>(static_cast<long>(z) * 4 / nz, 3))];
            break;
          case SyntheticKind::nested_spheres: {
            // Radius normalized so the largest inscribed sphere has radius 1.
            double r2 = 0.0;
            const int coord[3] = {x, y, z};
            for (int axis = 0; axis < 3; ++axis) {
              const double c = 0.5 * (dims[axis] - 1);
              if (c > 0.0) r2 += ((coord[axis] - c) / c) * ((coord[axis] - c) / c);
            }
            const double r = std::sqrt(r2);
            if (r < 0.3) {
              values[i] = kShellLevels[2];
            } else if (r < 0.6) {
              values[i] = kShellLevels[1];
            } else if (r < 0.9) {
              values[i] = kShellLevels[0];
            }
            break;
          }
        }
      }
    }
  }
  // Extrema span the u16 code range so write_raw exports a usable file.
  return VolumeDataset(d, std::move(values), 0.0, 65535.0);
}

VolumeDataset open_volume(const std::string& reference) {
  constexpr std::string_view prefix = "synthetic:";
  if (reference.rfind(prefix, 0) != 0) return load_raw(reference);

  const std::string rest = reference.substr(prefix.size());
  const auto colon = rest.find(':');
  const SyntheticKind kind = parse_synthetic_kind(rest.substr(0, colon));
  std::array<int, 3> dims{64, 64, 64};
  if (colon != std::string::npos) {
    std::string size = rest.substr(colon + 1);
    std::replace(size.begin(), size.end(), 'x', ' ');
    std::istringstream in(size);
    int a = 0, b = 0, c = 0;
    in >> a;
    if (in >> b >> c) {
      dims = {a, b, c};
    } else {
      dims = {a, a, a};
    }
    if (dims[0] < 2 || dims[1] < 2 || dims[2] < 2 || dims[0] > 1024 || dims[1] > 1024 || dims[2] > 1024) {
      throw bad_request("bad synthetic volume size: " + reference);
    }
  }
  return make_synthetic(kind, dims);
}

std::string describe(const VolumeDataset& dataset, int histogram_bins) {
  std::ostringstream out;
  const auto& d = dataset.descriptor();
  out << "dims: " << d.dims[0] << " x " << d.dims[1] << " x " << d.dims[2] << '\n';
  out << "spacing: " << d.spacing[0] << ' ' << d.spacing[1] << ' ' << d.spacing[2] << '\n';
  out << "scalar_kind: " << (d.scalar_kind == ScalarKind::u8 ? "u8" : "u16") << '\n';
  out << "raw range: [" << dataset.raw_min() << ", " << dataset.raw_max() << "]\n";
  out << "histogram (" << histogram_bins << " bins over normalized values):\n";
  const auto counts = histogram(dataset, histogram_bins);
  const std::size_t peak = *std::max_element(counts.begin(), counts.end());
  for (int b = 0; b < histogram_bins; ++b) {
    const std::size_t c = counts[static_cast<std::size_t>(b)];
    const int bar = peak > 0 ? static_cast<int>(40.0 * static_cast<double>(c) / static_cast<double>(peak)) : 0;
    char label[32];
    std::snprintf(label, sizeof label, "  [%.3f, %.3f) ", static_cast<double>(b) / histogram_bins,
                  static_cast<double>(b + 1) / histogram_bins);
    out << label << std::string(static_cast<std::size_t>(bar), '#') << ' ' << c << '\n';
  }
  return out.str();
}

}  // namespace tfevolve
