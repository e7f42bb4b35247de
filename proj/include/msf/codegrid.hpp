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

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msf/common.hpp"

namespace msf {

// 2-D grid of codebook indices produced by the encoder and modeled by the
// autoregressive prior.
struct CodeGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_codes = 0;  // K
  std::vector<std::uint16_t> indices;  // row-major

  CodeGrid() = default;
  CodeGrid(std::size_t h, std::size_t w, std::size_t k, std::uint16_t fill = 0)
      : height(h), width(w), num_codes(k), indices(h * w, fill) {
    validate();
  }

  std::uint16_t at(std::size_t r, std::size_t c) const { return indices[r * width + c]; }
  std::uint16_t& at(std::size_t r, std::size_t c) { return indices[r * width + c]; }

  void validate() const {
    require(height > 0 && width > 0, "code grid dims must be positive");
    require(num_codes > 0 && num_codes <= 65536, "code grid K out of range");
    require(indices.size() == height * width, "code grid has wrong index count");
    for (std::uint16_t v : indices) {
      if (v >= num_codes) {
        fail(ErrorKind::invalid_argument,
             "code index " + std::to_string(v) + " >= K=" + std::to_string(num_codes));
      }
    }
  }

  friend bool operator==(const CodeGrid&, const CodeGrid&) = default;
};

// "MSZG" | height u32 LE | width u32 LE | K u32 LE | indices u16 LE row-major
inline void write_codegrid(const std::filesystem::path& path, const CodeGrid& grid) {
  grid.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  auto u32 = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                       static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    os.write(b, 4);
  };
  os.write("MSZG", 4);
  u32(static_cast<std::uint32_t>(grid.height));
  u32(static_cast<std::uint32_t>(grid.width));
  u32(static_cast<std::uint32_t>(grid.num_codes));
  for (std::uint16_t v : grid.indices) {
    const char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    os.write(b, 2);
  }
  if (!os) fail(ErrorKind::io, "failed writing " + path.string());
}

inline CodeGrid read_codegrid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    fail(std::filesystem::exists(path) ? ErrorKind::io : ErrorKind::missing_artifact,
         "cannot read code grid " + path.string());
  }
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSZG", 4) != 0) {
    fail(ErrorKind::io, path.string() + ": bad code grid magic");
  }
  auto u32 = [&]() {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::io, path.string() + ": truncated");
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
           (std::uint32_t{b[3]} << 24);
  };
  CodeGrid g;
  g.height = u32();
  g.width = u32();
  g.num_codes = u32();
  g.indices.resize(g.height * g.width);
  for (auto& v : g.indices) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) fail(ErrorKind::io, path.string() + ": truncated");
    v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorKind::io, path.string() + ": " + e.what());
  }
  return g;
}

}  // namespace msf
