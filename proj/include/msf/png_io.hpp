/* Copyright 2026 The microseg-forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// 8-bit PNG reading and writing through libpng, plus conversions to the
// image types. Files are written without timestamps or other ancillary
// chunks, so identical pixels always produce identical bytes.

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "msf/common.hpp"
#include "msf/image.hpp"

namespace msf::png {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int channels = 0;  // 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
  std::vector<std::uint8_t> bytes;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    fail(mode[0] == 'r' && !std::filesystem::exists(path) ? ErrorKind::missing_artifact
                                                          : ErrorKind::io,
         "cannot open " + path.string());
  }
  return f;
}

}  // namespace detail

inline RawImage read(const std::filesystem::path& path) {
  detail::File file = detail::open(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    fail(ErrorKind::io, path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, "libpng initialisation failed");
  }
  RawImage out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void write(const std::filesystem::path& path, const RawImage& img) {
  require(img.channels >= 1 && img.channels <= 4, "png write: bad channel count");
  require(img.bytes.size() == img.width * img.height * static_cast<std::size_t>(img.channels),
          "png write: buffer size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::File file = detail::open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "libpng initialisation failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "failed writing " + path.string());
  }
  static constexpr int kColorType[5] = {0, PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA,
                                        PNG_COLOR_TYPE_RGB, PNG_COLOR_TYPE_RGB_ALPHA};
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, kColorType[img.channels],
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * static_cast<std::size_t>(img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.bytes.data() + y * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) fail(ErrorKind::io, "failed writing " + path.string());
}

// --- typed helpers -----------------------------------------------------------

inline RgbImage read_rgb(const std::filesystem::path& path) {
  RawImage raw = read(path);
  RgbImage img(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.width * raw.height; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = raw.channels >= 3 ? c : 0;
      img.rgb[3 * i + static_cast<std::size_t>(c)] =
          raw.bytes[i * static_cast<std::size_t>(raw.channels) + static_cast<std::size_t>(src)];
    }
  }
  return img;
}

inline void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  write(path, RawImage{img.width, img.height, 3, img.rgb});
}

inline GrayPlane read_plane(const std::filesystem::path& path) {
  RawImage raw = read(path);
  require(raw.channels <= 2, path.string() + ": expected a single-channel gray PNG",
          ErrorKind::io);
  GrayPlane plane(raw.width, raw.height);
  for (std::size_t i = 0; i < plane.values.size(); ++i) {
    plane.values[i] = raw.bytes[i * static_cast<std::size_t>(raw.channels)];
  }
  return plane;
}

inline void write_plane(const std::filesystem::path& path, const GrayPlane& plane) {
  write(path, RawImage{plane.width, plane.height, 1, plane.values});
}

// Accepts palette-gray masks and index masks (values < C). A plane whose
// values are all palette levels is decoded as palette-gray; otherwise all
// values must be valid class indices.
inline ClassMask read_mask(const std::filesystem::path& path, const Palette& palette) {
  GrayPlane plane = read_plane(path);
  bool all_palette = true;
  bool all_index = true;
  for (std::uint8_t v : plane.values) {
    all_palette = all_palette && palette.class_of_gray(v).has_value();
    all_index = all_index && v < palette.size();
  }
  if (all_palette) return ClassMask::from_gray(plane, palette);
  require(all_index, path.string() + ": mask values are neither palette grays nor class indices",
          ErrorKind::io);
  return ClassMask(plane.width, plane.height, palette, plane.values);
}

inline void write_mask(const std::filesystem::path& path, const ClassMask& mask) {
  write_plane(path, mask.to_gray());
}

inline DualImage read_dual(const std::filesystem::path& path) {
  RawImage raw = read(path);
  require(raw.channels == 4, path.string() + ": dual image must have 4 channels",
          ErrorKind::io);
  DualImage dual(raw.width, raw.height);
  dual.rgbm = std::move(raw.bytes);
  return dual;
}

inline void write_dual(const std::filesystem::path& path, const DualImage& dual) {
  write(path, RawImage{dual.width, dual.height, 4, dual.rgbm});
}

}  // namespace msf::png
