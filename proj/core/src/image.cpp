#include "kdrf/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace kdrf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Image::Image(int w, int h, Color3 fill) : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < px.size(); i += 3) {
    px[i] = fill[0];
    px[i + 1] = fill[1];
    px[i + 2] = fill[2];
  }
}

Image read_png(const std::string& path, const Color3& background) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("malformed PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit RGBA.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const auto color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 4);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * w * 4;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(w, h);
  for (std::size_t i = 0, n = static_cast<std::size_t>(w) * h; i < n; ++i) {
    const double a = raw[i * 4 + 3] / 255.0;
    for (int c = 0; c < 3; ++c) {
      const double v = raw[i * 4 + static_cast<std::size_t>(c)] / 255.0;
      img.px[i * 3 + static_cast<std::size_t>(c)] = v * a + background[static_cast<std::size_t>(c)] * (1.0 - a);
    }
  }
  return img;
}

namespace {

void write_png_impl(const std::string& path, int w, int h, int channels,
                    const std::vector<std::uint8_t>& raw) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write image: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(raw.data() + static_cast<std::size_t>(y) * w * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> raw(img.pixels() * 3);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.px[i]);
  write_png_impl(path, img.width, img.height, 3, raw);
}

void write_png_rgba(const std::string& path, const Image& img, const std::vector<double>& alpha) {
  if (alpha.size() != img.pixels()) throw std::invalid_argument("alpha plane size mismatch");
  std::vector<std::uint8_t> raw(img.pixels() * 4);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    for (int c = 0; c < 3; ++c) raw[i * 4 + static_cast<std::size_t>(c)] = to_byte(img.px[i * 3 + static_cast<std::size_t>(c)]);
    raw[i * 4 + 3] = to_byte(alpha[i]);
  }
  write_png_impl(path, img.width, img.height, 4, raw);
}

}  // namespace kdrf
