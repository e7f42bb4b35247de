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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msf/common.hpp"
#include "msf/image.hpp"

namespace msf::dataprep {

// ---------------------------------------------------------------------------
// Patch extraction

struct Patch {
  std::size_t x = 0;  // top-left corner in the source image
  std::size_t y = 0;
  RgbImage image;
  ClassMask mask;
};

// Non-overlapping top-left anchored grid; right/bottom residuals are dropped.
// Patches come back in row-major order.
inline std::vector<Patch> patchify(const RgbImage& image, const ClassMask& mask,
                                   std::size_t patch_size) {
  require(image.width == mask.width() && image.height == mask.height(),
          "patchify: image is " + std::to_string(image.width) + "x" +
              std::to_string(image.height) + " but mask is " + std::to_string(mask.width()) +
              "x" + std::to_string(mask.height()));
  require(patch_size > 0, "patchify: patch size must be positive");
  require(patch_size <= image.width && patch_size <= image.height,
          "patchify: patch size " + std::to_string(patch_size) + " exceeds image dims");
  const std::size_t cols = image.width / patch_size;
  const std::size_t rows = image.height / patch_size;
  std::vector<Patch> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Patch p{c * patch_size, r * patch_size, RgbImage(patch_size, patch_size),
              ClassMask(patch_size, patch_size, mask.palette())};
      for (std::size_t y = 0; y < patch_size; ++y) {
        for (std::size_t x = 0; x < patch_size; ++x) {
          p.image.set(x, y, image.pixel(p.x + x, p.y + y));
          p.mask.set(x, y, mask.at(p.x + x, p.y + y));
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dual images

inline DualImage join_dual(const RgbImage& image, const ClassMask& mask) {
  require(image.width == mask.width() && image.height == mask.height(),
          "join_dual: image and mask dims differ");
  DualImage dual(image.width, image.height);
  const auto& grays = mask.palette().grays;
  for (std::size_t i = 0; i < image.width * image.height; ++i) {
    dual.rgbm[4 * i + 0] = image.rgb[3 * i + 0];
    dual.rgbm[4 * i + 1] = image.rgb[3 * i + 1];
    dual.rgbm[4 * i + 2] = image.rgb[3 * i + 2];
    dual.rgbm[4 * i + 3] = grays[mask.classes()[i]];
  }
  return dual;
}

// The mask plane is returned raw; turning it into classes is post-processing.
inline std::pair<RgbImage, GrayPlane> split_dual(const DualImage& dual) {
  RgbImage image(dual.width, dual.height);
  GrayPlane plane(dual.width, dual.height);
  for (std::size_t i = 0; i < dual.width * dual.height; ++i) {
    image.rgb[3 * i + 0] = dual.rgbm[4 * i + 0];
    image.rgb[3 * i + 1] = dual.rgbm[4 * i + 1];
    image.rgb[3 * i + 2] = dual.rgbm[4 * i + 2];
    plane.values[i] = dual.rgbm[4 * i + 3];
  }
  return {std::move(image), std::move(plane)};
}

// ---------------------------------------------------------------------------
// Manifests

enum class Role { train, validation, test };
enum class Source { real, synthetic };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    case Role::test: return "test";
  }
  return "?";
}

inline const char* to_string(Source s) { return s == Source::real ? "real" : "synthetic"; }

inline Role parse_role(const std::string& s) {
  if (s == "train") return Role::train;
  if (s == "validation") return Role::validation;
  if (s == "test") return Role::test;
  fail(ErrorKind::io, "manifest: unknown role '" + s + "'");
}

inline Source parse_source(const std::string& s) {
  if (s == "real") return Source::real;
  if (s == "synthetic") return Source::synthetic;
  fail(ErrorKind::io, "manifest: unknown source '" + s + "'");
}

struct ManifestEntry {
  Role role = Role::train;
  Source source = Source::real;
  std::string image;
  std::string mask;
  std::string provenance;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// An image/mask pair available for composition.
struct PoolItem {
  std::string image;
  std::string mask;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  std::size_t count(Role role) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.role == role; }));
  }

  std::vector<ManifestEntry> with_role(Role role) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.role == role) out.push_back(e);
    }
    return out;
  }

  // Test entries are real; an image path appears at most once per role.
  void validate() const {
    std::set<std::pair<Role, std::string>> seen;
    for (const auto& e : entries) {
      require(!(e.role == Role::test && e.source == Source::synthetic),
              "manifest: synthetic entry '" + e.image + "' in the test role");
      require(seen.emplace(e.role, e.image).second,
              "manifest: '" + e.image + "' appears twice in role " + to_string(e.role));
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["provenance"] = provenance;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
      j["entries"].push_back({{"role", to_string(e.role)},
                              {"source", to_string(e.source)},
                              {"image", e.image},
                              {"mask", e.mask},
                              {"provenance", e.provenance}});
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::ordered_json& j) {
    DatasetManifest m;
    try {
      m.name = j.value("name", std::string{});
      if (j.contains("provenance")) m.provenance = j.at("provenance");
      for (const auto& e : j.at("entries")) {
        m.entries.push_back(ManifestEntry{parse_role(e.at("role")), parse_source(e.at("source")),
                                          e.at("image"), e.value("mask", std::string{}),
                                          e.value("provenance", std::string{})});
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::io, std::string("manifest: ") + ex.what());
    }
    m.validate();
    return m;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write " + path.string());
    os << to_json().dump(2) << '\n';
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
      fail(std::filesystem::exists(path) ? ErrorKind::io : ErrorKind::missing_artifact,
           "cannot read manifest " + path.string());
    }
    nlohmann::ordered_json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::io, path.string() + ": " + ex.what());
    }
    return from_json(j);
  }
};

// ---------------------------------------------------------------------------
// Composition

// round_half_up(percent / 100 * base_count)
constexpr std::size_t synthetic_count(std::size_t base_count, std::size_t percent) {
  return static_cast<std::size_t>(round_half_up_div(percent * base_count, 100));
}

// True when percent / 100 * base_count needs no rounding.
constexpr bool synthetic_count_is_exact(std::size_t base_count, std::size_t percent) {
  return (percent * base_count) % 100 == 0;
}

namespace detail {

inline std::vector<PoolItem> draw(const std::vector<PoolItem>& pool, std::size_t count,
                                  std::uint64_t seed) {
  require(pool.size() >= count,
          "compose: synthetic pool too small, required " + std::to_string(count) +
              ", available " + std::to_string(pool.size()));
  std::set<std::string> unique;
  for (const auto& p : pool) {
    require(unique.insert(p.image).second, "compose: pool lists '" + p.image + "' twice");
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots are a uniform draw.
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  std::vector<PoolItem> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(pool[order[i]]);
  return out;
}

}  // namespace detail

inline DatasetManifest compose_dataset(const DatasetManifest& base,
                                       const std::vector<PoolItem>& pool,
                                       std::size_t percent, std::uint64_t seed) {
  base.validate();
  const std::size_t base_train = base.count(Role::train);
  const std::size_t needed = synthetic_count(base_train, percent);
  DatasetManifest out = base;
  out.name = base.name + " [" + std::to_string(percent) + "%]";
  for (const auto& item : detail::draw(pool, needed, seed)) {
    out.entries.push_back(ManifestEntry{Role::train, Source::synthetic, item.image, item.mask,
                                        "synthetic addition " + std::to_string(percent) + "%"});
  }
  out.provenance["base"] = base.name;
  out.provenance["percent"] = percent;
  out.provenance["seed"] = seed;
  out.provenance["synthetic_added"] = needed;
  out.validate();
  return out;
}

inline DatasetManifest compose_pure_synthetic(std::size_t base_size,
                                              const std::vector<PoolItem>& pool,
                                              std::size_t percent,
                                              const std::vector<ManifestEntry>& validation,
                                              const std::vector<ManifestEntry>& test,
                                              std::uint64_t seed) {
  require(base_size > 0, "compose_pure_synthetic: base size must be positive");
  const std::size_t needed = synthetic_count(base_size, percent);
  DatasetManifest out;
  out.name = "synthetic [" + std::to_string(percent) + "%]";
  for (const auto& item : detail::draw(pool, needed, seed)) {
    out.entries.push_back(ManifestEntry{Role::train, Source::synthetic, item.image, item.mask,
                                        "pure synthetic " + std::to_string(percent) + "%"});
  }
  for (auto e : validation) {
    require(e.source == Source::real, "compose_pure_synthetic: validation entries must be real");
    e.role = Role::validation;
    out.entries.push_back(std::move(e));
  }
  for (auto e : test) {
    require(e.source == Source::real, "compose_pure_synthetic: test entries must be real");
    e.role = Role::test;
    out.entries.push_back(std::move(e));
  }
  out.provenance["base_size"] = base_size;
  out.provenance["percent"] = percent;
  out.provenance["seed"] = seed;
  out.provenance["synthetic_added"] = needed;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Procedural toy data

struct ToySample {
  RgbImage image;
  ClassMask mask;
  DualImage dual;
};

struct ToyOptions {
  double min_radius = 0.08;  // blob radii as a fraction of the image size
  double max_radius = 0.2;
  double edge_softness = 1.5;  // pixels over which image colors blend
  int noise = 12;              // per-channel uniform noise amplitude
};

// Random elliptical blobs of classes 1..C-1 on a class-0 background. Every
// foreground class gets at least one blob per image. The mask is the hard
// ellipse interior, so it is exact; the image blends across a soft edge and
// carries bounded noise.
inline std::vector<ToySample> generate_toy_dual_images(std::size_t count, std::size_t size,
                                                       std::size_t num_classes,
                                                       std::uint64_t seed,
                                                       const ToyOptions& opt = {}) {
  require(count > 0 && size > 0, "toygen: count and size must be positive");
  require(num_classes >= 2, "toygen: need at least 2 classes");
  const Palette palette = Palette::standard(num_classes);
  Rng master(seed);
  std::vector<ToySample> out;
  out.reserve(count);
  const double s = static_cast<double>(size);
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng = master.fork(n);
    std::vector<std::uint8_t> blob_classes;
    for (std::size_t k = 1; k < num_classes; ++k) {
      const std::size_t reps = 1 + rng.below(2);
      for (std::size_t r = 0; r < reps; ++r) blob_classes.push_back(static_cast<std::uint8_t>(k));
    }
    rng.shuffle(blob_classes);

    std::vector<double> canvas(3 * size * size);
    for (std::size_t i = 0; i < size * size; ++i) {
      for (std::size_t c = 0; c < 3; ++c) canvas[3 * i + c] = palette.colors[0][c];
    }
    std::vector<std::uint8_t> classes(size * size, 0);

    for (std::uint8_t k : blob_classes) {
      const double cx = rng.uniform(0.0, s);
      const double cy = rng.uniform(0.0, s);
      const double rx = s * rng.uniform(opt.min_radius, opt.max_radius);
      const double ry = s * rng.uniform(opt.min_radius, opt.max_radius);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double rmin = std::min(rx, ry);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double u = (ct * dx + st * dy) / rx;
          const double v = (-st * dx + ct * dy) / ry;
          const double d = std::sqrt(u * u + v * v);
          const double edge = (d - 1.0) * rmin;  // approx. signed pixel distance
          const double alpha = std::clamp(0.5 - edge / opt.edge_softness, 0.0, 1.0);
          const std::size_t i = y * size + x;
          if (d < 1.0) classes[i] = k;
          for (std::size_t c = 0; c < 3; ++c) {
            canvas[3 * i + c] += alpha * (palette.colors[k][c] - canvas[3 * i + c]);
          }
        }
      }
    }

    RgbImage image(size, size);
    for (std::size_t i = 0; i < 3 * size * size; ++i) {
      const double noise =
          static_cast<double>(static_cast<long>(rng.below(2 * static_cast<std::uint64_t>(opt.noise) + 1)) -
                              opt.noise);
      image.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(canvas[i] + noise), 0L, 255L));
    }
    ClassMask mask(size, size, palette, std::move(classes));
    DualImage dual = join_dual(image, mask);
    out.push_back(ToySample{std::move(image), std::move(mask), std::move(dual)});
  }
  return out;
}

}  // namespace msf::dataprep
