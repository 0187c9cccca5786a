#pragma once

#include <array>
#include <string>
#include <vector>

namespace kdrf {

using Color3 = std::array<double, 3>;

// Row-major RGB image with values in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<double> px;  // height * width * 3

  Image() = default;
  Image(int w, int h, Color3 fill = {0, 0, 0});
  double& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)]; }
  double at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)]; }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

// Reads an 8-bit PNG (grayscale/RGB/RGBA all accepted); straight alpha is
// composited onto `background` at load.
Image read_png(const std::string& path, const Color3& background);

// Writes 8-bit RGB, values clamped to [0,1]. No color management.
void write_png(const std::string& path, const Image& img);

// Writes 8-bit RGBA with a straight (unpremultiplied) alpha plane.
void write_png_rgba(const std::string& path, const Image& img, const std::vector<double>& alpha);

}  // namespace kdrf
