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

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msf/common.hpp"

namespace msf {

using Rgb = std::array<std::uint8_t, 3>;

// Per-class display color and mask gray level. Gray levels must be strictly
// increasing with the class index so the gray encoding is invertible.
struct Palette {
  std::vector<Rgb> colors;
  std::vector<std::uint8_t> grays;

  // Gray level round(255 * i / (C - 1)); for C = 4 that is {0, 85, 170, 255}.
  static Palette standard(std::size_t num_classes) {
    require(num_classes >= 1 && num_classes <= 256,
            "palette: class count must be in [1, 256], got " + std::to_string(num_classes));
    static constexpr Rgb kFourPhase[4] = {
        Rgb{70, 70, 80}, Rgb{200, 170, 90}, Rgb{215, 215, 225}, Rgb{125, 60, 50}};
    Palette p;
    for (std::size_t i = 0; i < num_classes; ++i) {
      const std::size_t level =
          num_classes == 1 ? 0 : round_half_up_div(255 * i, num_classes - 1);
      p.grays.push_back(static_cast<std::uint8_t>(level));
      if (num_classes == 4) {
        p.colors.push_back(kFourPhase[i]);
      } else {
        p.colors.push_back(hue_color(i, num_classes));
      }
    }
    return p;
  }

  std::size_t size() const noexcept { return grays.size(); }

  void validate() const {
    require(!grays.empty(), "palette: no classes");
    require(colors.size() == grays.size(), "palette: color/gray count mismatch");
    for (std::size_t i = 1; i < grays.size(); ++i) {
      require(grays[i - 1] < grays[i],
              "palette: gray levels must be strictly increasing (class " +
                  std::to_string(i) + ")");
    }
  }

  std::optional<std::uint8_t> class_of_gray(std::uint8_t gray) const {
    for (std::size_t i = 0; i < grays.size(); ++i) {
      if (grays[i] == gray) return static_cast<std::uint8_t>(i);
    }
    return std::nullopt;
  }

  friend bool operator==(const Palette&, const Palette&) = default;

 private:
  static Rgb hue_color(std::size_t i, std::size_t n) {
    if (i == 0) return Rgb{70, 70, 80};
    const double h = 6.0 * static_cast<double>(i - 1) / static_cast<double>(n - 1);
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = 1; g = x; break;
      case 1: r = x; g = 1; break;
      case 2: g = 1; b = x; break;
      case 3: g = x; b = 1; break;
      case 4: r = x; b = 1; break;
      default: r = 1; b = x; break;
    }
    auto q = [](double v) { return static_cast<std::uint8_t>(60 + std::lround(170 * v)); };
    return Rgb{q(r), q(g), q(b)};
  }
};

// Single 8-bit plane (e.g. the raw mask channel of a decoded dual image).
struct GrayPlane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;

  GrayPlane() = default;
  GrayPlane(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), values(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return values[y * width + x]; }

  friend bool operator==(const GrayPlane&, const GrayPlane&) = default;
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved R, G, B

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), rgb(3 * w * h, 0) {
    require(w > 0 && h > 0, "image dims must be positive");
  }

  Rgb pixel(std::size_t x, std::size_t y) const {
    const std::size_t i = 3 * (y * width + x);
    return Rgb{rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(std::size_t x, std::size_t y, Rgb c) {
    const std::size_t i = 3 * (y * width + x);
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Per-pixel class indices in [0, palette.size()).
class ClassMask {
 public:
  ClassMask() = default;
  ClassMask(std::size_t w, std::size_t h, Palette palette, std::uint8_t fill = 0)
      : width_(w), height_(h), palette_(std::move(palette)), classes_(w * h, fill) {
    require(w > 0 && h > 0, "mask dims must be positive");
    palette_.validate();
    require(fill < palette_.size(), "mask fill class out of range");
  }

  ClassMask(std::size_t w, std::size_t h, Palette palette, std::vector<std::uint8_t> classes)
      : width_(w), height_(h), palette_(std::move(palette)), classes_(std::move(classes)) {
    require(w > 0 && h > 0, "mask dims must be positive");
    palette_.validate();
    require(classes_.size() == w * h, "mask class buffer has wrong length");
    for (std::uint8_t c : classes_) {
      if (c >= palette_.size()) {
        fail(ErrorKind::invalid_argument, "mask class index " + std::to_string(c) +
                                              " >= class count " + std::to_string(palette_.size()));
      }
    }
  }

  // Exact inversion of a palette-encoded plane; any non-palette value is an
  // error.
  static ClassMask from_gray(const GrayPlane& plane, const Palette& palette) {
    ClassMask m(plane.width, plane.height, palette);
    for (std::size_t i = 0; i < plane.values.size(); ++i) {
      auto c = palette.class_of_gray(plane.values[i]);
      if (!c) {
        fail(ErrorKind::invalid_argument,
             "gray value " + std::to_string(plane.values[i]) + " is not a palette level");
      }
      m.classes_[i] = *c;
    }
    return m;
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t num_classes() const noexcept { return palette_.size(); }
  std::size_t pixel_count() const noexcept { return classes_.size(); }
  const Palette& palette() const noexcept { return palette_; }

  std::uint8_t at(std::size_t x, std::size_t y) const { return classes_[y * width_ + x]; }
  void set(std::size_t x, std::size_t y, std::uint8_t c) {
    require(c < palette_.size(), "mask class index out of range");
    classes_[y * width_ + x] = c;
  }
  const std::vector<std::uint8_t>& classes() const noexcept { return classes_; }

  GrayPlane to_gray() const {
    GrayPlane plane(width_, height_);
    for (std::size_t i = 0; i < classes_.size(); ++i) plane.values[i] = palette_.grays[classes_[i]];
    return plane;
  }

  friend bool operator==(const ClassMask&, const ClassMask&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  Palette palette_;
  std::vector<std::uint8_t> classes_;
};

// RGB micrograph plus mask-gray plane, interleaved R, G, B, M.
struct DualImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgbm;

  DualImage() = default;
  DualImage(std::size_t w, std::size_t h) : width(w), height(h), rgbm(4 * w * h, 0) {
    require(w > 0 && h > 0, "dual image dims must be positive");
  }

  std::uint8_t channel(std::size_t x, std::size_t y, std::size_t c) const {
    return rgbm[4 * (y * width + x) + c];
  }
  std::uint8_t& channel(std::size_t x, std::size_t y, std::size_t c) {
    return rgbm[4 * (y * width + x) + c];
  }

  friend bool operator==(const DualImage&, const DualImage&) = default;
};

}  // namespace msf
