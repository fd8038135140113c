#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "etiobench/voxvol.hpp"

using namespace etio::voxvol;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "etio_test_voxvol";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Volume random_volume(std::mt19937& rng, Dims d, Spacing s) {
  std::uniform_int_distribution<int> hu(kMinHu, kMaxHu);
  std::vector<std::int16_t> v(d.count());
  for (auto& x : v) x = static_cast<std::int16_t>(hu(rng));
  return Volume(d, s, std::move(v));
}

// Independent trilinear oracle: explicit 8-corner weights, edge clamp inside the
// grid extent [-0.5, n-0.5], air beyond it.
double trilinear_oracle(const Volume& v, double cx, double cy, double cz) {
  const Dims& d = v.dims();
  const double c[3] = {cx, cy, cz};
  const int n[3] = {d.nx, d.ny, d.nz};
  int lo[3], hi[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    if (c[a] < -0.5 - 1e-9 || c[a] > n[a] - 0.5 + 1e-9) return kAirHu;
    const double cc = std::min(std::max(c[a], 0.0), n[a] - 1.0);
    lo[a] = static_cast<int>(std::floor(cc));
    if (lo[a] > n[a] - 1) lo[a] = n[a] - 1;
    hi[a] = std::min(lo[a] + 1, n[a] - 1);
    f[a] = cc - lo[a];
  }
  double sum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
    const double w = (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
    sum += w * v.at(bx ? hi[0] : lo[0], by ? hi[1] : lo[1], bz ? hi[2] : lo[2]);
  }
  return sum;
}

}  // namespace

TEST_CASE("volume constructor enforces invariants") {
  CHECK_THROWS_AS(Volume({0, 2, 2}, {1, 1, 1}), VolumeError);
  CHECK_THROWS_AS(Volume({2, 2, 2}, {1, 0, 1}), VolumeError);
  CHECK_THROWS_AS(Volume({2, 2, 2}, {1, 1, 1}, std::vector<std::int16_t>(7, 0)), VolumeError);
  CHECK_THROWS_AS(Volume({1, 1, 1}, {1, 1, 1}, std::vector<std::int16_t>{4000}), VolumeError);
}

TEST_CASE("MVV1 write then read of a 2x2x2 zero volume is identical") {
  const Volume v({2, 2, 2}, {1, 1, 1}, std::int16_t{0});
  const auto path = temp_file("zeros.mvv");
  write_volume(v, path);
  CHECK(read_volume(path) == v);
}

TEST_CASE("MVV1 length mismatch is rejected") {
  const Volume v({3, 3, 3}, {1, 1, 1}, std::int16_t{5});
  auto bytes = encode_volume(v);
  bytes.resize(bytes.size() - 2);  // 26 voxels
  CHECK_THROWS_WITH_AS(decode_volume(bytes), doctest::Contains("length mismatch"), VolumeError);
}

TEST_CASE("MVV1 rejects bad magic and nonpositive geometry") {
  auto bytes = encode_volume(Volume({1, 1, 1}, {1, 1, 1}, std::int16_t{0}));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_volume(bad), doctest::Contains("magic"), VolumeError);

  const std::string header = R"({"dims":[0,1,1],"dtype":"i16le","spacing_mm":[1.0,1.0,1.0]})";
  std::vector<std::uint8_t> raw = {'M', 'V', 'V', '1', static_cast<std::uint8_t>(header.size()), 0, 0, 0};
  raw.insert(raw.end(), header.begin(), header.end());
  CHECK_THROWS_AS(decode_volume(raw), VolumeError);
}

TEST_CASE("MVV1 file size for a 280x280x30 volume is header plus two bytes per voxel") {
  const Volume v({280, 280, 30}, {0.6, 0.6, 4.2});
  const auto path = temp_file("full.mvv");
  write_volume(v, path);
  const std::string header = R"({"dims":[280,280,30],"dtype":"i16le","spacing_mm":[0.6,0.6,4.2]})";
  CHECK(std::filesystem::file_size(path) == 4 + 4 + header.size() + 2u * 280 * 280 * 30);
}

TEST_CASE("property: encode/decode round trip is byte-identical") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> dim(1, 9);
  std::uniform_real_distribution<double> sp(0.1, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Volume v = random_volume(rng, {dim(rng), dim(rng), dim(rng)}, {sp(rng), sp(rng), sp(rng)});
    const auto bytes = encode_volume(v);
    const Volume back = decode_volume(bytes);
    REQUIRE(back == v);
    REQUIRE(encode_volume(back) == bytes);
  }
}

TEST_CASE("resample at the same spacing is voxel-identical") {
  std::mt19937 rng(1);
  const Volume v = random_volume(rng, {7, 5, 4}, {0.6, 0.6, 4.2});
  CHECK(resample(v, {0.6, 0.6, 4.2}) == v);
}

TEST_CASE("resample of a constant volume stays constant") {
  const Volume v({6, 5, 3}, {1.0, 1.3, 4.0}, std::int16_t{42});
  for (Spacing s : {Spacing{0.5, 0.5, 2.0}, Spacing{2.7, 0.4, 9.0}, Spacing{0.6, 0.6, 4.2}}) {
    const Volume r = resample(v, s);
    for (auto x : r.voxels()) REQUIRE(x == 42);
  }
}

TEST_CASE("resample output dims round half up with minimum one") {
  const Volume v({5, 3, 1}, {1.0, 1.0, 1.0}, std::int16_t{0});
  const Volume r = resample(v, {2.0, 4.0, 3.0});
  CHECK(r.dims() == Dims{3, 1, 1});
  CHECK_THROWS_AS(resample(v, {0.0, 1.0, 1.0}), VolumeError);
}

TEST_CASE("resample of a 2x2x2 ramp with halved spacing matches the brute-force trilinear oracle") {
  std::vector<std::int16_t> ramp;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) ramp.push_back(static_cast<std::int16_t>(100 * x + 40 * y + 16 * z));
  const Volume v({2, 2, 2}, {2.0, 2.0, 2.0}, ramp);
  const Volume r = resample(v, {1.0, 1.0, 1.0});
  REQUIRE(r.dims() == Dims{4, 4, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double expect = trilinear_oracle(v, (x + 0.5) * 0.5 - 0.5, (y + 0.5) * 0.5 - 0.5, (z + 0.5) * 0.5 - 0.5);
        CHECK(std::abs(r.at(x, y, z) - expect) <= 0.5);
      }
  // Interior midpoint between the four x=0/x=1 planes.
  CHECK(r.at(1, 1, 1) == 100 * 0.25 + 40 * 0.25 + 16 * 0.25);
}

TEST_CASE("property: resample reproduces affine fields exactly on interior voxels") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> dim(3, 10), coef(-3, 3);
  const double ratios[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  std::uniform_int_distribution<int> pick(0, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const Dims d{dim(rng), dim(rng), dim(rng)};
    // Multiples of 8 keep every sample at 1/8-voxel offsets integral.
    const int a = 8 * coef(rng), b = 8 * coef(rng), c = 8 * coef(rng);
    const Spacing s{1.0, 1.5, 3.0};
    Volume v(d, s);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) v.at(x, y, z) = static_cast<std::int16_t>(a * x + b * y + c * z);
    const double rx = ratios[pick(rng)], ry = ratios[pick(rng)], rz = ratios[pick(rng)];
    const Volume r = resample(v, {s.sx * rx, s.sy * ry, s.sz * rz});
    const Dims& o = r.dims();
    for (int z = 0; z < o.nz; ++z)
      for (int y = 0; y < o.ny; ++y)
        for (int x = 0; x < o.nx; ++x) {
          const double px = (x + 0.5) * rx - 0.5, py = (y + 0.5) * ry - 0.5, pz = (z + 0.5) * rz - 0.5;
          if (px < 0 || py < 0 || pz < 0 || px > d.nx - 1 || py > d.ny - 1 || pz > d.nz - 1) continue;
          REQUIRE(std::abs(r.at(x, y, z) - (a * px + b * py + c * pz)) < 1e-3);
        }
  }
}

TEST_CASE("rotate by zero degrees is voxel-identical") {
  std::mt19937 rng(3);
  const Volume v = random_volume(rng, {9, 7, 3}, {1, 1, 1});
  CHECK(rotate_axial(v, 0.0) == v);
}

TEST_CASE("a bright voxel at the slice center is a fixed point of rotation") {
  Volume v({9, 9, 2}, {1, 1, 1}, std::int16_t{0});
  v.at(4, 4, 1) = 2000;
  for (int deg = 0; deg < 360; deg += 7) {
    const Volume r = rotate_axial(v, deg);
    REQUIRE(r.at(4, 4, 1) == 2000);
  }
}

TEST_CASE("rotate by 180 degrees matches the index-flip oracle within 1 HU") {
  std::mt19937 rng(5);
  for (Dims d : {Dims{8, 6, 3}, Dims{7, 9, 2}}) {
    const Volume v = random_volume(rng, d, {1, 1, 1});
    const Volume r = rotate_axial(v, 180.0);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) REQUIRE(std::abs(r.at(x, y, z) - v.at(d.nx - 1 - x, d.ny - 1 - y, z)) <= 1);
  }
}

TEST_CASE("property: rotating by theta then -theta restores smooth interiors within 2 HU") {
  const Dims d{41, 41, 3};
  Volume v(d, {1, 1, 1});
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double r2 = (x - 14.0) * (x - 14.0) + (y - 23.0) * (y - 23.0);
        v.set_clamped(x, y, z, 40.0 + 60.0 * std::exp(-r2 / 200.0) + 10.0 * z);
      }
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> angle(-180.0, 180.0);
  for (int trial = 0; trial < 12; ++trial) {
    const double theta = angle(rng);
    const Volume back = rotate_axial(rotate_axial(v, theta), -theta);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          const double r = std::hypot(x - 20.0, y - 20.0);
          if (r > 20.0 - 3.0) continue;  // stay clear of the frame edge
          REQUIRE(std::abs(back.at(x, y, z) - v.at(x, y, z)) <= 2);
        }
  }
}

TEST_CASE("augment_rotations yields 18 copies with 0 and 180 degree anchors") {
  std::mt19937 rng(2);
  const Volume v = random_volume(rng, {10, 8, 2}, {0.6, 0.6, 4.2});
  const auto copies = augment_rotations(v);
  REQUIRE(copies.size() == 18);
  CHECK(copies[0] == v);
  CHECK(copies[9] == rotate_axial(v, 180.0));
  for (const auto& c : copies) {
    CHECK(c.dims() == v.dims());
    CHECK(c.spacing() == v.spacing());
  }
}

TEST_CASE("skull_strip on an all-air volume reports an empty mask") {
  const Volume air({8, 8, 8}, {1, 1, 1});
  CHECK_THROWS_WITH_AS(skull_strip(air), doctest::Contains("empty mask"), VolumeError);
}

TEST_CASE("skull_strip without a bone shell keeps a uniform brain-range volume whole") {
  const Volume v({6, 7, 5}, {1, 1, 1}, std::int16_t{30});
  const auto s = skull_strip(v);
  CHECK(s.mask.count() == v.dims().count());
  CHECK(s.volume == v);
}

TEST_CASE("skull_strip keeps the enclosed component and blanks everything else") {
  // Box shell of bone around a 30 HU core, plus a larger 30 HU slab outside the shell.
  Volume v({20, 12, 12}, {1, 1, 1});
  for (int z = 1; z < 11; ++z)
    for (int y = 1; y < 11; ++y)
      for (int x = 1; x < 11; ++x) {
        const bool shell = x == 1 || x == 10 || y == 1 || y == 10 || z == 1 || z == 10;
        v.at(x, y, z) = shell ? 1000 : 30;
      }
  for (int z = 0; z < 12; ++z)
    for (int y = 0; y < 12; ++y)
      for (int x = 12; x < 20; ++x) v.at(x, y, z) = 20;
  const auto s = skull_strip(v);
  CHECK(s.mask.count() == 8u * 8 * 8);
  CHECK(s.mask.test(5, 5, 5));
  CHECK_FALSE(s.mask.test(15, 5, 5));
  for (std::size_t i = 0; i < v.dims().count(); ++i)
    REQUIRE(s.volume.voxels()[i] == (s.mask.test(i) ? v.voxels()[i] : kAirHu));
}

TEST_CASE("crop_or_pad identity and padding oracle") {
  std::mt19937 rng(4);
  const Volume v = random_volume(rng, {4, 4, 4}, {1, 1, 1});
  CHECK(crop_or_pad(v, {4, 4, 4}) == v);

  const Volume p = crop_or_pad(v, {6, 6, 6});
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        const bool inner = x >= 1 && x <= 4 && y >= 1 && y <= 4 && z >= 1 && z <= 4;
        REQUIRE(p.at(x, y, z) == (inner ? v.at(x - 1, y - 1, z - 1) : kAirHu));
      }
  CHECK(p.spacing() == v.spacing());
}

TEST_CASE("crop_or_pad targets the paper pipeline crop") {
  const Volume v({256, 256, 32}, {0.6, 0.6, 4.2}, std::int16_t{30});
  const Volume c = crop_or_pad(v, {280, 280, 30});
  CHECK(c.dims() == Dims{280, 280, 30});
  CHECK(c.at(0, 0, 0) == kAirHu);
  CHECK(c.at(140, 140, 15) == 30);
}

TEST_CASE("property: crop_or_pad round trip restores retained voxels") {
  std::mt19937 rng(6);
  std::uniform_int_distribution<int> dim(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const Dims d{dim(rng), dim(rng), dim(rng)}, t{dim(rng), dim(rng), dim(rng)};
    const Volume v = random_volume(rng, d, {1, 1, 1});
    const Volume back = crop_or_pad(crop_or_pad(v, t), d);
    REQUIRE(back.dims() == d);
    auto kept = [](int n, int target, int i) {
      const int pad = target >= n ? (target - n) / 2 : -((n - target) / 2);
      return i + pad >= 0 && i + pad < target;
    };
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x)
          if (kept(d.nx, t.nx, x) && kept(d.ny, t.ny, y) && kept(d.nz, t.nz, z)) REQUIRE(back.at(x, y, z) == v.at(x, y, z));
  }
}
