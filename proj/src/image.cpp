#include "calibkit/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string_view>

#include "calibkit/errors.hpp"

namespace calibkit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

enum class Layout { kGray8, kGray16, kRgb8 };

// Reads a PNG into `rows` with the transforms needed for the requested layout.
// Returns (width, height).
std::pair<int, int> read_png_rows(const std::string& path, Layout layout,
                                  std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ParseError("cannot open PNG: " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ParseError("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("libpng init failed: " + path);
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);

  const bool is_color = (color & PNG_COLOR_MASK_COLOR) != 0 || color == PNG_COLOR_TYPE_PALETTE;
  if (layout == Layout::kRgb8) {
    if (!is_color) png_set_gray_to_rgb(png);
  } else if (is_color) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (layout == Layout::kGray16) {
    if (depth < 16) png_set_expand_16(png);
    png_set_swap(png);  // host little-endian order
  } else if (depth == 16) {
    png_set_strip_16(png);
  }
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  bytes.assign(rowbytes * static_cast<std::size_t>(height), 0);
  row_ptrs.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) row_ptrs[static_cast<std::size_t>(y)] = bytes.data() + rowbytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return {width, height};
}

void write_png_rows(const std::string& path, int width, int height, int color_type, int bit_depth,
                    const std::uint8_t* data, std::size_t rowbytes, bool swap16) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ParseError("cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ParseError("libpng init failed: " + path);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ParseError("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + rowbytes * y);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Gray8 read_png_gray8(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  const auto [w, h] = read_png_rows(path, Layout::kGray8, bytes);
  Gray8 img(w, h, 1);
  img.data = std::move(bytes);
  return img;
}

Gray16 read_png_gray16(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  const auto [w, h] = read_png_rows(path, Layout::kGray16, bytes);
  Gray16 img(w, h, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
  }
  return img;
}

Rgb8 read_png_rgb8(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  const auto [w, h] = read_png_rows(path, Layout::kRgb8, bytes);
  Rgb8 img(w, h, 3);
  img.data = std::move(bytes);
  return img;
}

void write_png(const std::string& path, const Gray8& img) {
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, 8, img.data.data(),
                 static_cast<std::size_t>(img.width), false);
}

void write_png(const std::string& path, const Gray16& img) {
  std::vector<std::uint8_t> bytes(img.data.size() * 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(img.data[i] & 0xff);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(img.data[i] >> 8);
  }
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, 16, bytes.data(),
                 static_cast<std::size_t>(img.width) * 2, true);
}

void write_png_rgb(const std::string& path, const Rgb8& img) {
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, img.data.data(),
                 static_cast<std::size_t>(img.width) * 3, false);
}

Rgb8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open PPM: " + path);
  auto next_token = [&]() {
    std::string tok;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += c;
    }
    return tok;
  };
  if (next_token() != "P6") throw ParseError("not a binary PPM (P6): " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw ParseError("bad PPM header: " + path);
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError("unsupported PPM header: " + path);
  Rgb8 img(w, h, 3);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw ParseError("truncated PPM: " + path);
  }
  return img;
}

void write_ppm(const std::string& path, const Rgb8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write PPM: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw ParseError("PPM write failed: " + path);
}

Rgb8 read_rgb_image(const std::string& path) {
  const std::string_view p(path);
  if (p.size() >= 4 && (p.substr(p.size() - 4) == ".ppm" || p.substr(p.size() - 4) == ".PPM")) {
    return read_ppm(path);
  }
  return read_png_rgb8(path);
}

}  // namespace calibkit
