#include <algorithm>
#include <array>
#include <vector>

#include "etiobench/voxvol.hpp"

namespace etio::voxvol {

namespace {

using Grid = std::vector<std::uint8_t>;

struct Neighbors {
  Dims d;

  struct Coord {
    int x, y, z;
  };

  Coord coord(std::size_t i) const {
    const std::size_t sy = static_cast<std::size_t>(d.nx), sz = sy * d.ny;
    return {static_cast<int>(i % sy), static_cast<int>(i / sy % d.ny), static_cast<int>(i / sz)};
  }

  template <typename F>
  void each(std::size_t i, F&& f) const {
    const std::size_t sy = static_cast<std::size_t>(d.nx), sz = sy * d.ny;
    const auto [x, y, z] = coord(i);
    if (x > 0) f(i - 1);
    if (x + 1 < d.nx) f(i + 1);
    if (y > 0) f(i - sy);
    if (y + 1 < d.ny) f(i + sy);
    if (z > 0) f(i - sz);
    if (z + 1 < d.nz) f(i + sz);
  }

  bool on_border(std::size_t i) const {
    const auto [x, y, z] = coord(i);
    return x == 0 || y == 0 || z == 0 || x == d.nx - 1 || y == d.ny - 1 || z == d.nz - 1;
  }
};

// Flood from `seeds` through voxels where `passable` is set.
Grid flood(const Neighbors& nb, const Grid& passable, const std::vector<std::size_t>& seeds) {
  Grid reached(passable.size(), 0);
  std::vector<std::size_t> stack;
  for (auto s : seeds)
    if (passable[s] && !reached[s]) {
      reached[s] = 1;
      stack.push_back(s);
    }
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    nb.each(i, [&](std::size_t j) {
      if (passable[j] && !reached[j]) {
        reached[j] = 1;
        stack.push_back(j);
      }
    });
  }
  return reached;
}

Grid largest_component(const Neighbors& nb, const Grid& in) {
  std::vector<int> label(in.size(), 0);
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < in.size(); ++s) {
    if (!in[s] || label[s]) continue;
    ++next;
    std::size_t size = 0;
    label[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      ++size;
      nb.each(i, [&](std::size_t j) {
        if (in[j] && !label[j]) {
          label[j] = next;
          stack.push_back(j);
        }
      });
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
  }
  Grid out(in.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = (best_label != 0 && label[i] == best_label) ? 1 : 0;
  return out;
}

Grid dilate(const Neighbors& nb, const Grid& in) {
  Grid out = in;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!in[i]) nb.each(i, [&](std::size_t j) { out[i] |= in[j]; });
  return out;
}

// Voxels beyond the grid count as set, so erosion never eats the border.
Grid erode(const Neighbors& nb, const Grid& in) {
  Grid out = in;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (in[i]) nb.each(i, [&](std::size_t j) { out[i] &= in[j]; });
  return out;
}

}  // namespace

StrippedVolume skull_strip(const Volume& volume, const SkullStripParams& params) {
  const Dims& d = volume.dims();
  const Neighbors nb{d};
  const auto vox = volume.voxels();
  const std::size_t n = d.count();

  Grid bone(n, 0), non_bone(n, 0), candidate(n, 0);
  bool any_bone = false;
  for (std::size_t i = 0; i < n; ++i) {
    bone[i] = vox[i] >= params.bone_threshold_hu;
    non_bone[i] = !bone[i];
    candidate[i] = vox[i] >= params.brain_low_hu && vox[i] <= params.brain_high_hu;
    any_bone = any_bone || bone[i];
  }

  if (any_bone) {
    std::vector<std::size_t> border;
    for (std::size_t i = 0; i < n; ++i)
      if (nb.on_border(i)) border.push_back(i);
    const Grid outside = flood(nb, non_bone, border);
    Grid enclosed(n, 0);
    bool any_enclosed = false;
    for (std::size_t i = 0; i < n; ++i) {
      enclosed[i] = candidate[i] && !outside[i];
      any_enclosed = any_enclosed || enclosed[i];
    }
    // An open shell encloses nothing; fall back to every candidate.
    if (any_enclosed) candidate = std::move(enclosed);
  }

  Grid region = largest_component(nb, candidate);
  if (std::find(region.begin(), region.end(), 1) == region.end())
    throw VolumeError("skull_strip: no brain-range component found (empty mask)");

  for (int r = 0; r < params.closing_radius; ++r) region = dilate(nb, region);
  for (int r = 0; r < params.closing_radius; ++r) region = erode(nb, region);

  StrippedVolume out{Volume(d, volume.spacing()), BrainMask(d)};
  auto dst = out.volume.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    if (region[i] && !bone[i]) {
      out.mask.set(i);
      dst[i] = vox[i];
    }
  }
  return out;
}

}  // namespace etio::voxvol
