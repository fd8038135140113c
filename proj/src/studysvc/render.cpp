#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "etiobench/studysvc.hpp"

namespace etio::studysvc {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

}  // namespace

std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, int width, int height) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("encode_png_gray: pixel count does not match dimensions");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("encode_png_gray: libpng initialisation failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("encode_png_gray: libpng write failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::string> render_slices_png(const voxvol::Volume& volume) {
  const auto& d = volume.dims();
  const double lo = kWindowLevel - kWindowWidth / 2.0;
  std::vector<std::string> slices;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(d.nx) * d.ny);
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double t = std::clamp((volume.at(x, y, z) - lo) / kWindowWidth, 0.0, 1.0);
        pixels[static_cast<std::size_t>(y) * d.nx + x] = static_cast<std::uint8_t>(std::lround(t * 255.0));
      }
    slices.push_back(encode_png_gray(pixels, d.nx, d.ny));
  }
  return slices;
}

std::string percent_label(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", p * 100.0);
  return buf;
}

}  // namespace etio::studysvc
