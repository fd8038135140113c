#include <algorithm>
#include <cmath>
#include <numbers>

#include "etiobench/voxvol.hpp"

namespace etio::voxvol {

namespace {

constexpr double kExtentSlack = 1e-9;

// Linear interpolation taps along one axis. The grid occupies [-0.5, n-0.5] in
// voxel units; inside it coordinates are clamped to [0, n-1].
struct Taps {
  int i0 = 0;
  int i1 = 0;
  double t = 0.0;
  bool inside = false;
};

Taps taps(double c, int n) {
  Taps k;
  if (c < -0.5 - kExtentSlack || c > n - 0.5 + kExtentSlack) return k;
  k.inside = true;
  c = std::clamp(c, 0.0, static_cast<double>(n - 1));
  k.i0 = std::min(static_cast<int>(std::floor(c)), n - 1);
  k.i1 = std::min(k.i0 + 1, n - 1);
  k.t = c - k.i0;
  return k;
}

int rounded_extent(int n, double in_spacing, double out_spacing) {
  const double v = n * in_spacing / out_spacing;
  return std::max(1, static_cast<int>(std::floor(v + 0.5 + 1e-9)));
}

}  // namespace

Volume resample(const Volume& volume, const Spacing& target) {
  if (!(target.sx > 0.0) || !(target.sy > 0.0) || !(target.sz > 0.0))
    throw VolumeError("resample: target spacing must be positive");
  const Dims& in = volume.dims();
  const Spacing& s = volume.spacing();
  const Dims out{rounded_extent(in.nx, s.sx, target.sx), rounded_extent(in.ny, s.sy, target.sy),
                 rounded_extent(in.nz, s.sz, target.sz)};
  Volume result(out, target);

  const double rx = target.sx / s.sx, ry = target.sy / s.sy, rz = target.sz / s.sz;
  std::vector<Taps> tx(out.nx), ty(out.ny), tz(out.nz);
  for (int i = 0; i < out.nx; ++i) tx[i] = taps((i + 0.5) * rx - 0.5, in.nx);
  for (int i = 0; i < out.ny; ++i) ty[i] = taps((i + 0.5) * ry - 0.5, in.ny);
  for (int i = 0; i < out.nz; ++i) tz[i] = taps((i + 0.5) * rz - 0.5, in.nz);

  for (int z = 0; z < out.nz; ++z) {
    const Taps& kz = tz[z];
    for (int y = 0; y < out.ny; ++y) {
      const Taps& ky = ty[y];
      for (int x = 0; x < out.nx; ++x) {
        const Taps& kx = tx[x];
        if (!(kx.inside && ky.inside && kz.inside)) continue;  // stays air
        auto lerp_x = [&](int yy, int zz) {
          return (1.0 - kx.t) * volume.at(kx.i0, yy, zz) + kx.t * volume.at(kx.i1, yy, zz);
        };
        const double c0 = (1.0 - ky.t) * lerp_x(ky.i0, kz.i0) + ky.t * lerp_x(ky.i1, kz.i0);
        const double c1 = (1.0 - ky.t) * lerp_x(ky.i0, kz.i1) + ky.t * lerp_x(ky.i1, kz.i1);
        result.set_clamped(x, y, z, (1.0 - kz.t) * c0 + kz.t * c1);
      }
    }
  }
  return result;
}

Volume rotate_axial(const Volume& volume, double degrees) {
  const Dims& d = volume.dims();
  Volume result(d, volume.spacing());
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0;

  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) {
      // Inverse map: output pixel pulls from the source rotated by -degrees.
      const double dx = x - cx, dy = y - cy;
      const Taps kx = taps(c * dx + s * dy + cx, d.nx);
      const Taps ky = taps(-s * dx + c * dy + cy, d.ny);
      if (!(kx.inside && ky.inside)) continue;
      for (int z = 0; z < d.nz; ++z) {
        const double top = (1.0 - kx.t) * volume.at(kx.i0, ky.i0, z) + kx.t * volume.at(kx.i1, ky.i0, z);
        const double bottom = (1.0 - kx.t) * volume.at(kx.i0, ky.i1, z) + kx.t * volume.at(kx.i1, ky.i1, z);
        result.set_clamped(x, y, z, (1.0 - ky.t) * top + ky.t * bottom);
      }
    }
  }
  return result;
}

std::vector<Volume> augment_rotations(const Volume& volume) {
  std::vector<Volume> out;
  out.reserve(kRotationCount);
  out.push_back(volume);
  for (int k = 1; k < kRotationCount; ++k) out.push_back(rotate_axial(volume, k * kRotationStepDegrees));
  return out;
}

Volume crop_or_pad(const Volume& volume, const Dims& target) {
  const Dims& d = volume.dims();
  Volume result(target, volume.spacing());
  // Source index = destination index + shift along each axis.
  auto shift = [](int n, int t) { return t >= n ? -((t - n) / 2) : (n - t) / 2; };
  const int ox = shift(d.nx, target.nx), oy = shift(d.ny, target.ny), oz = shift(d.nz, target.nz);
  for (int z = 0; z < target.nz; ++z) {
    const int sz = z + oz;
    if (sz < 0 || sz >= d.nz) continue;
    for (int y = 0; y < target.ny; ++y) {
      const int sy = y + oy;
      if (sy < 0 || sy >= d.ny) continue;
      for (int x = 0; x < target.nx; ++x) {
        const int sx = x + ox;
        if (sx < 0 || sx >= d.nx) continue;
        result.at(x, y, z) = volume.at(sx, sy, sz);
      }
    }
  }
  return result;
}

Volume preprocess(const Volume& volume, const PrepParams& params) {
  Volume v = resample(volume, params.target_spacing);
  if (params.strip) v = skull_strip(v).volume;
  return crop_or_pad(v, params.crop);
}

}  // namespace etio::voxvol
