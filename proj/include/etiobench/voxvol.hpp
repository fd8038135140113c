#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace etio::voxvol {

inline constexpr std::int16_t kAirHu = -1000;
inline constexpr int kMinHu = -1024;
inline constexpr int kMaxHu = 3071;

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
  bool operator==(const Spacing&) const = default;
};

/// Signed 16-bit Hounsfield voxel grid, x-fastest then y then z.
class Volume {
 public:
  Volume() = default;
  /// Filled with `fill`.
  Volume(Dims dims, Spacing spacing, std::int16_t fill = kAirHu);
  /// Validates every invariant; throws VolumeError on violation.
  Volume(Dims dims, Spacing spacing, std::vector<std::int16_t> voxels);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const std::int16_t> voxels() const { return voxels_; }
  std::span<std::int16_t> voxels() { return voxels_; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
  }
  std::int16_t at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }
  std::int16_t& at(int x, int y, int z) { return voxels_[index(x, y, z)]; }

  /// Writes a value after clamping to the valid HU range.
  void set_clamped(int x, int y, int z, double hu);

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<std::int16_t> voxels_;
};

/// One bit per voxel, same grid as its source volume.
class BrainMask {
 public:
  BrainMask() = default;
  explicit BrainMask(Dims dims) : dims_(dims), bits_(dims.count(), 0) {}

  const Dims& dims() const { return dims_; }
  bool test(std::size_t i) const { return bits_[i] != 0; }
  bool test(int x, int y, int z) const { return bits_[(static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x] != 0; }
  void set(std::size_t i, bool on = true) { bits_[i] = on ? 1 : 0; }
  void set(int x, int y, int z, bool on = true) { set((static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x, on); }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  bool operator==(const BrainMask&) const = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> bits_;
};

/// Sørensen-Dice overlap of two masks on the same grid.
double dice(const BrainMask& a, const BrainMask& b);

// MVV1 file format.
std::vector<std::uint8_t> encode_volume(const Volume& volume);
Volume decode_volume(std::span<const std::uint8_t> bytes);
Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& volume, const std::filesystem::path& path);

/// Trilinear resampling to a new voxel size. Voxel centers are aligned to the
/// physical extent of the grid; samples outside the extent are air.
Volume resample(const Volume& volume, const Spacing& target_spacing);

/// Per-slice bilinear rotation about ((nx-1)/2, (ny-1)/2).
Volume rotate_axial(const Volume& volume, double degrees);

inline constexpr int kRotationCount = 18;
inline constexpr double kRotationStepDegrees = 20.0;

/// The 18 axial copies at 0, 20, ..., 340 degrees.
std::vector<Volume> augment_rotations(const Volume& volume);

struct SkullStripParams {
  int bone_threshold_hu = 300;
  int brain_low_hu = -20;
  int brain_high_hu = 100;
  int closing_radius = 1;
};

struct StrippedVolume {
  Volume volume;
  BrainMask mask;
};

/// Throws VolumeError when no brain-range component exists.
StrippedVolume skull_strip(const Volume& volume, const SkullStripParams& params = {});

/// Center-aligned crop and/or symmetric air padding.
Volume crop_or_pad(const Volume& volume, const Dims& target_dims);

struct PrepParams {
  Spacing target_spacing{0.6, 0.6, 4.2};
  Dims crop{280, 280, 30};
  bool strip = true;
};

/// resample -> skull_strip -> crop_or_pad.
Volume preprocess(const Volume& volume, const PrepParams& params);

}  // namespace etio::voxvol
