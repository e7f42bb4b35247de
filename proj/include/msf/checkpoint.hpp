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

// Checkpoints: <stem>.json carries a header and the ordered tensor names,
// <stem>.bin the tensors back to back in the MSFT encoding.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msf/common.hpp"
#include "msf/tensor.hpp"

namespace msf {

using Json = nlohmann::ordered_json;

struct Checkpoint {
  Json header = Json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& get(const std::string& name, const Shape& expected) const {
    for (const auto& [n, t] : tensors) {
      if (n != name) continue;
      require(t.dims() == expected,
              "checkpoint tensor '" + name + "' has dims " + shape_string(t.dims()) +
                  ", expected " + shape_string(expected),
              ErrorKind::io);
      return t;
    }
    fail(ErrorKind::io, "checkpoint is missing tensor '" + name + "'");
  }
};

inline std::filesystem::path checkpoint_header_path(const std::filesystem::path& stem) {
  return stem.string() + ".json";
}
inline std::filesystem::path checkpoint_data_path(const std::filesystem::path& stem) {
  return stem.string() + ".bin";
}

inline bool checkpoint_exists(const std::filesystem::path& stem) {
  return std::filesystem::exists(checkpoint_header_path(stem)) &&
         std::filesystem::exists(checkpoint_data_path(stem));
}

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ck) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  Json header = ck.header;
  header["tensors"] = Json::array();
  {
    std::ofstream bin(checkpoint_data_path(stem), std::ios::binary);
    if (!bin) fail(ErrorKind::io, "cannot write " + checkpoint_data_path(stem).string());
    for (const auto& [name, t] : ck.tensors) {
      header["tensors"].push_back(name);
      write_tensor(bin, t);
    }
  }
  std::ofstream js(checkpoint_header_path(stem), std::ios::binary);
  if (!js) fail(ErrorKind::io, "cannot write " + checkpoint_header_path(stem).string());
  js << header.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  if (!checkpoint_exists(stem)) {
    fail(ErrorKind::missing_artifact, "checkpoint not found: " + stem.string() + ".{json,bin}");
  }
  Checkpoint ck;
  std::ifstream js(checkpoint_header_path(stem), std::ios::binary);
  try {
    js >> ck.header;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, checkpoint_header_path(stem).string() + ": " + e.what());
  }
  std::ifstream bin(checkpoint_data_path(stem), std::ios::binary);
  for (const auto& name : ck.header.at("tensors")) {
    ck.tensors.emplace_back(name.get<std::string>(), read_tensor(bin));
  }
  return ck;
}

}  // namespace msf
