#include "etiobench/voxvol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"

namespace etio::voxvol {

namespace {

void check_geometry(const Dims& dims, const Spacing& spacing) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw VolumeError("volume dims must be positive");
  if (!(spacing.sx > 0.0) || !(spacing.sy > 0.0) || !(spacing.sz > 0.0))
    throw VolumeError("volume spacing must be positive");
}

constexpr char kMagic[4] = {'M', 'V', 'V', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, std::int16_t fill) : dims_(dims), spacing_(spacing) {
  check_geometry(dims, spacing);
  if (fill < kMinHu || fill > kMaxHu) throw VolumeError("fill value outside HU range");
  voxels_.assign(dims.count(), fill);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<std::int16_t> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_geometry(dims, spacing);
  if (voxels_.size() != dims.count())
    throw VolumeError("voxel count " + std::to_string(voxels_.size()) + " does not match dims (" +
                      std::to_string(dims.count()) + ")");
  for (auto v : voxels_)
    if (v < kMinHu || v > kMaxHu) throw VolumeError("voxel value " + std::to_string(v) + " outside HU range");
}

void Volume::set_clamped(int x, int y, int z, double hu) {
  const double c = std::clamp(std::round(hu), static_cast<double>(kMinHu), static_cast<double>(kMaxHu));
  at(x, y, z) = static_cast<std::int16_t>(c);
}

std::size_t BrainMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double dice(const BrainMask& a, const BrainMask& b) {
  if (a.dims() != b.dims()) throw VolumeError("dice: mask dims differ");
  std::size_t inter = 0;
  const std::size_t n = a.dims().count();
  for (std::size_t i = 0; i < n; ++i)
    if (a.test(i) && b.test(i)) ++inter;
  const std::size_t total = a.count() + b.count();
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

std::vector<std::uint8_t> encode_volume(const Volume& volume) {
  const auto& d = volume.dims();
  const auto& s = volume.spacing();
  nlohmann::json header = {{"dims", {d.nx, d.ny, d.nz}}, {"spacing_mm", {s.sx, s.sy, s.sz}}, {"dtype", "i16le"}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + 2 * d.count());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (auto v : volume.voxels()) {
    const auto u = static_cast<std::uint16_t>(v);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>(u >> 8));
  }
  return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw VolumeError("bad magic: not an MVV1 file");
  const std::uint32_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len)) throw VolumeError("truncated MVV1 header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw VolumeError(std::string("malformed MVV1 header: ") + e.what());
  }
  Dims dims;
  Spacing spacing;
  try {
    if (header.at("dtype").get<std::string>() != "i16le") throw VolumeError("unsupported dtype");
    const auto& jd = header.at("dims");
    const auto& js = header.at("spacing_mm");
    if (jd.size() != 3 || js.size() != 3) throw VolumeError("dims and spacing_mm need three entries");
    dims = {jd[0].get<int>(), jd[1].get<int>(), jd[2].get<int>()};
    spacing = {js[0].get<double>(), js[1].get<double>(), js[2].get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw VolumeError(std::string("malformed MVV1 header: ") + e.what());
  }
  check_geometry(dims, spacing);

  const std::size_t payload = bytes.size() - 8 - header_len;
  if (payload != 2 * dims.count())
    throw VolumeError("payload length mismatch: header declares " + std::to_string(dims.count()) +
                      " voxels, payload holds " + std::to_string(payload / 2) + (payload % 2 ? ".5" : ""));

  std::vector<std::int16_t> voxels(dims.count());
  const std::uint8_t* p = bytes.data() + 8 + header_len;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(p[2 * i] | (p[2 * i + 1] << 8));
    voxels[i] = static_cast<std::int16_t>(u);
  }
  return Volume(dims, spacing, std::move(voxels));
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeError("cannot open volume file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_volume(bytes);
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
  const auto bytes = encode_volume(volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeError("cannot write volume file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw VolumeError("short write to " + path.string());
}

}  // namespace etio::voxvol
