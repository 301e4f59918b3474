// Copyright 2026 The CDML Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDML_IMAGE_IO_HPP_
#define CDML_IMAGE_IO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "cdml/tensor.hpp"

namespace cdml
{

class ImageDecodeError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit RGB raster.
struct RgbImage
{
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

namespace detail
{
struct FileCloser
{
  void operator()(std::FILE * f) const {std::fclose(f);}
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline RgbImage read_png(const std::filesystem::path & path)
{
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) {
    throw ImageDecodeError("cannot open " + path.string());
  }
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw ImageDecodeError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageDecodeError("libpng initialization failed");
  }
  RgbImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageDecodeError("corrupt PNG data in " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) {
    png_set_strip_16(png);
  }
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
  }
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
  }
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  if (png_get_rowbytes(png, info) != img.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageDecodeError("unsupported PNG layout in " + path.string());
  }
  img.pixels.resize(img.width * img.height * 3);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = img.pixels.data() + y * img.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path & path, const RgbImage & img)
{
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) {
    throw std::runtime_error("cannot write " + path.string());
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(
    png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
    PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
    PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Binary (P6) or ASCII (P3) portable pixmap with maxval <= 255.
inline RgbImage read_ppm(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ImageDecodeError("cannot open " + path.string());
  }
  auto next_token = [&in]() {
      std::string tok;
      char ch;
      while (in.get(ch)) {
        if (ch == '#') {
          std::string skip;
          std::getline(in, skip);
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
          tok.push_back(ch);
          break;
        }
      }
      while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) {
        tok.push_back(ch);
      }
      return tok;
    };
  const std::string magic = next_token();
  if (magic != "P6" && magic != "P3") {
    throw ImageDecodeError(path.string() + " is not a P3/P6 pixmap");
  }
  RgbImage img;
  long maxval = 0;
  try {
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    maxval = std::stol(next_token());
  } catch (const std::exception &) {
    throw ImageDecodeError("malformed pixmap header in " + path.string());
  }
  if (img.width == 0 || img.height == 0 || maxval <= 0 || maxval > 255) {
    throw ImageDecodeError("unsupported pixmap header in " + path.string());
  }
  img.pixels.resize(img.width * img.height * 3);
  if (magic == "P6") {
    in.read(reinterpret_cast<char *>(img.pixels.data()),
      static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
      throw ImageDecodeError("truncated pixmap " + path.string());
    }
  } else {
    for (auto & p : img.pixels) {
      const std::string tok = next_token();
      if (tok.empty()) {
        throw ImageDecodeError("truncated pixmap " + path.string());
      }
      p = static_cast<std::uint8_t>(std::stoi(tok));
    }
  }
  if (maxval != 255) {
    for (auto & p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(255.0 * p / static_cast<double>(maxval)));
    }
  }
  return img;
}

inline void write_ppm(const std::filesystem::path & path, const RgbImage & img)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(img.pixels.data()),
    static_cast<std::streamsize>(img.pixels.size()));
}

/// Bilinear resampling (pixel-center aligned) into a CxHxW tensor in [0, 1].
/// Equal source and target sizes reproduce the source exactly.
inline Tensor to_tensor(const RgbImage & img, std::size_t height, std::size_t width)
{
  Tensor out({3, height, width});
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  auto src = [&img](std::size_t y, std::size_t x, std::size_t c) {
      return static_cast<double>(img.pixels[(y * img.width + x) * 3 + c]);
    };
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp(
      (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const auto y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp(
        (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const auto x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = src(y0, x0, c);
        if (wx != 0.0 || wy != 0.0) {
          const double top = (1.0 - wx) * src(y0, x0, c) + wx * src(y0, x1, c);
          const double bottom = (1.0 - wx) * src(y1, x0, c) + wx * src(y1, x1, c);
          v = (1.0 - wy) * top + wy * bottom;
        }
        out.at(c, y, x) = v / 255.0;
      }
    }
  }
  return out;
}

/// Quantizes a 3xHxW tensor (values clamped to [0, 1]) to 8-bit RGB.
inline RgbImage to_rgb(const Tensor & t)
{
  if (t.rank() != 3 || t.extent(0) != 3) {
    throw DimensionError("expected a 3xHxW tensor, got " + shape_string(t.shape()));
  }
  RgbImage img;
  img.height = t.extent(1);
  img.width = t.extent(2);
  img.pixels.resize(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
        img.pixels[(y * img.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

}  // namespace cdml

#endif  // CDML_IMAGE_IO_HPP_
