#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace calibkit {

/// Interleaved 8-bit or 16-bit raster.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
};

using Gray8 = Raster<std::uint8_t>;
using Gray16 = Raster<std::uint16_t>;
using Rgb8 = Raster<std::uint8_t>;  // channels == 3

// PNG I/O. Readers convert any color type/bit depth to the requested layout
// (palette expanded, alpha dropped, color averaged to gray). Errors throw
// ParseError with the path.
Gray8 read_png_gray8(const std::string& path);
Gray16 read_png_gray16(const std::string& path);
Rgb8 read_png_rgb8(const std::string& path);
void write_png(const std::string& path, const Gray8& img);
void write_png(const std::string& path, const Gray16& img);
void write_png_rgb(const std::string& path, const Rgb8& img);

// Binary PPM (P6, maxval 255).
Rgb8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Rgb8& img);

/// Reads .png or .ppm by extension into RGB.
Rgb8 read_rgb_image(const std::string& path);

}  // namespace calibkit
