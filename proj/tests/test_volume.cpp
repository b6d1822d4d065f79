#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "tfevolve/error.hpp"
#include "tfevolve/rng.hpp"
#include "tfevolve/volume.hpp"

using namespace tfevolve;
using testing::TempDir;

namespace {

std::filesystem::path write_volume(const TempDir& dir, const std::string& name, const std::string& descriptor,
                                   const std::string& payload) {
  testing::spit(dir / (name + ".raw"), payload);
  testing::spit(dir / (name + ".json"), descriptor);
  return dir / (name + ".json");
}

std::string descriptor(const std::string& dims, const std::string& kind, const std::string& file,
                       const std::string& endian = "little") {
  return R"({"dims":)" + dims + R"(,"spacing":[1,1,1],"scalar_kind":")" + kind + R"(","endianness":")" + endian +
         R"(","data_path":")" + file + R"("})";
}

}  // namespace

TEST_CASE("constant u8 volume normalizes to zero") {
  TempDir dir;
  auto path = write_volume(dir, "c", descriptor("[2,2,2]", "u8", "c.raw"), std::string(8, '\xFF'));
  VolumeDataset v = load_raw(path);
  CHECK(v.raw_min() == 255.0);
  CHECK(v.raw_max() == 255.0);
  for (float x : v.values()) CHECK(x == 0.0f);
}

TEST_CASE("u8 extrema map to 0 and 1") {
  TempDir dir;
  std::string bytes = {'\x00', '\xFF', '\x00', '\xFF', '\x00', '\xFF', '\x00', '\x7F'};
  VolumeDataset v = load_raw(write_volume(dir, "u", descriptor("[2,2,2]", "u8", "u.raw"), bytes));
  CHECK(v.values()[0] == 0.0f);
  CHECK(v.values()[1] == 1.0f);
  CHECK(v.values()[7] == doctest::Approx(127.0 / 255.0));
}

TEST_CASE("u16 little and big endian decode") {
  TempDir dir;
  // Voxels 0x0000, 0xFFFF, 0x0100 and five zeros.
  std::string le(16, '\0');
  le[2] = '\xFF';
  le[3] = '\xFF';
  le[4] = '\x00';
  le[5] = '\x01';
  VolumeDataset a = load_raw(write_volume(dir, "le", descriptor("[2,2,2]", "u16", "le.raw"), le));
  CHECK(a.values()[2] == doctest::Approx(256.0 / 65535.0).epsilon(1e-9));
  CHECK(a.values()[2] == doctest::Approx(0.003906).epsilon(1e-3));

  std::string be(16, '\0');
  be[2] = '\xFF';
  be[3] = '\xFF';
  be[4] = '\x01';
  be[5] = '\x00';
  VolumeDataset b = load_raw(write_volume(dir, "be", descriptor("[2,2,2]", "u16", "be.raw", "big"), be));
  CHECK(b.values()[2] == a.values()[2]);
}

TEST_CASE("load errors") {
  TempDir dir;
  SUBCASE("missing descriptor") { CHECK_THROWS_AS(load_raw(dir / "nope.json"), Error); }
  SUBCASE("size mismatch") {
    auto path = write_volume(dir, "s", descriptor("[2,2,2]", "u8", "s.raw"), std::string(7, '\0'));
    try {
      load_raw(path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::bad_request);
    }
  }
  SUBCASE("unparseable descriptor") {
    auto path = write_volume(dir, "p", "{dims:", std::string(8, '\0'));
    CHECK_THROWS_AS(load_raw(path), Error);
  }
  SUBCASE("unsupported scalar kind") {
    auto path = write_volume(dir, "k", descriptor("[2,2,2]", "f32", "k.raw"), std::string(32, '\0'));
    CHECK_THROWS_AS(load_raw(path), Error);
  }
  SUBCASE("dims below two") {
    auto path = write_volume(dir, "d", descriptor("[1,2,2]", "u8", "d.raw"), std::string(4, '\0'));
    CHECK_THROWS_AS(load_raw(path), Error);
  }
}

TEST_CASE("trilinear sampling") {
  VolumeDataset ramp = make_synthetic(SyntheticKind::ramp, {4, 3, 3});
  VolumeDataset spheres = make_synthetic(SyntheticKind::nested_spheres, {9, 9, 9});
  CHECK(sample(spheres, {1.0f, 1.0f, 1.0f}) == spheres.at(1, 1, 1));
  CHECK(sample(spheres, {4.0f, 4.0f, 4.0f}) == spheres.at(4, 4, 4));

  VolumeDataset two = make_synthetic(SyntheticKind::ramp, {2, 2, 2});
  CHECK(sample(two, {0.5f, 0.0f, 1.0f}) == doctest::Approx(0.5));
  CHECK(sample(ramp, {-1.0f, 0.0f, 0.0f}) == 0.0f);
  CHECK(sample(ramp, {3.5f, 0.0f, 0.0f}) == 0.0f);
  CHECK(sample(ramp, {0.0f, 0.0f, 2.0f}) == 0.0f);
  CHECK(sample(ramp, {3.0f, 2.0f, 2.0f}) == 1.0f);
}

TEST_CASE("sample is a convex combination of its neighbours") {
  VolumeDataset v = make_synthetic(SyntheticKind::nested_spheres, {11, 9, 7});
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    std::array<float, 3> p{static_cast<float>(rng.uniform(0, 10)), static_cast<float>(rng.uniform(0, 8)),
                           static_cast<float>(rng.uniform(0, 6))};
    int x0 = static_cast<int>(p[0]), y0 = static_cast<int>(p[1]), z0 = static_cast<int>(p[2]);
    float lo = 1.0f, hi = 0.0f;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          float s = v.at(std::min(x0 + dx, 10), std::min(y0 + dy, 8), std::min(z0 + dz, 6));
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
    float s = sample(v, p);
    CHECK(s >= lo - 1e-6f);
    CHECK(s <= hi + 1e-6f);
  }
}

TEST_CASE("histogram") {
  VolumeDataset zero = make_synthetic(SyntheticKind::nested_spheres, {2, 2, 2});
  auto h = histogram(zero, 4);
  CHECK(h == std::vector<std::size_t>{8, 0, 0, 0});

  VolumeDataset two = make_synthetic(SyntheticKind::ramp, {2, 1, 1});
  CHECK(histogram(two, 2) == std::vector<std::size_t>{1, 1});

  VolumeDataset ramp = make_synthetic(SyntheticKind::ramp, {256, 1, 1});
  auto counts = histogram(ramp, 256);
  for (auto c : counts) CHECK(c == 1);

  VolumeDataset spheres = make_synthetic(SyntheticKind::nested_spheres, {17, 13, 11});
  for (int bins : {1, 3, 16, 100}) {
    std::size_t total = 0;
    for (auto c : histogram(spheres, bins)) total += c;
    CHECK(total == spheres.values().size());
  }
  CHECK_THROWS_AS(histogram(spheres, 0), Error);
}

TEST_CASE("synthetic volumes") {
  VolumeDataset ramp = make_synthetic(SyntheticKind::ramp, {4, 1, 1});
  CHECK(ramp.values()[0] == 0.0f);
  CHECK(ramp.values()[1] == doctest::Approx(1.0 / 3.0));
  CHECK(ramp.values()[2] == doctest::Approx(2.0 / 3.0));
  CHECK(ramp.values()[3] == 1.0f);

  VolumeDataset s = make_synthetic(SyntheticKind::nested_spheres, {33, 33, 33});
  CHECK(s.at(16, 16, 16) == 0.85f);
  CHECK(s.at(0, 0, 0) == 0.0f);
  CHECK(s.at(32, 32, 32) == 0.0f);
  std::set<float> levels(s.values().begin(), s.values().end());
  CHECK(levels == std::set<float>{0.0f, 0.25f, 0.55f, 0.85f});

  VolumeDataset slabs = make_synthetic(SyntheticKind::slab_stack, {4, 4, 8});
  std::set<float> slab_levels(slabs.values().begin(), slabs.values().end());
  CHECK(slab_levels.size() == 4);
  CHECK(slabs.at(0, 0, 0) < slabs.at(0, 0, 7));
}

TEST_CASE("write then reload is bit-identical") {
  TempDir dir;
  SUBCASE("u16 big endian") {
    std::string be;
    Rng rng(3);
    for (int i = 0; i < 5 * 4 * 3; ++i) {
      auto code = static_cast<unsigned>(rng.below(65536));
      be.push_back(static_cast<char>(code >> 8));
      be.push_back(static_cast<char>(code & 0xFF));
    }
    VolumeDataset a = load_raw(write_volume(dir, "a", descriptor("[5,4,3]", "u16", "a.raw", "big"), be));
    write_raw(a, dir / "copy.json");
    VolumeDataset b = load_raw(dir / "copy.json");
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end()));
    CHECK(testing::slurp(dir / "copy.raw") == be);
  }
  SUBCASE("u8") {
    std::string bytes;
    for (int i = 0; i < 27; ++i) bytes.push_back(static_cast<char>(i * 7 + 10));
    VolumeDataset a = load_raw(write_volume(dir, "b", descriptor("[3,3,3]", "u8", "b.raw"), bytes));
    write_raw(a, dir / "copy8.json");
    VolumeDataset b = load_raw(dir / "copy8.json");
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end()));
    CHECK(b.raw_min() == 10.0);
  }
}

TEST_CASE("volume references") {
  CHECK(open_volume("synthetic:ramp:8").dims() == std::array<int, 3>{8, 8, 8});
  CHECK(open_volume("synthetic:slab_stack:4x5x6").dims() == std::array<int, 3>{4, 5, 6});
  CHECK_THROWS_AS(open_volume("synthetic:teapot:8"), Error);
  CHECK_THROWS_AS(open_volume("synthetic:ramp:1"), Error);
  std::string text = describe(open_volume("synthetic:nested_spheres:16"));
  CHECK(text.find("16 x 16 x 16") != std::string::npos);
}
