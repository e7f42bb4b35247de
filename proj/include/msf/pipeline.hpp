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

// Pipeline configuration and the subcommand implementations behind the
// microseg-forge tool. Every run_* function writes its artifacts below the
// run's output directory and records inputs and outputs in a provenance
// file (<out>/provenance/<subcommand>.json).
//
// Layout below the output directory, with the default paths:
//
//   data/toy/{images,masks,dual}/   toygen
//   data/grids/                     encode
//   data/samples/{grids,dual}/      sample
//   data/synthetic/{images,masks}/  postprocess
//   data/datasets/                  compose
//   checkpoints/                    train-vqvae, train-pixelcnn
//   reports/                        evaluate, report

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "msf/checkpoint.hpp"
#include "msf/codegrid.hpp"
#include "msf/common.hpp"
#include "msf/dataprep.hpp"
#include "msf/image.hpp"
#include "msf/maskproc.hpp"
#include "msf/metrics.hpp"
#include "msf/pixelcnn.hpp"
#include "msf/png_io.hpp"
#include "msf/report.hpp"
#include "msf/vqvae.hpp"

namespace msf::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct PathsConfig {
  std::string data_root = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
};

struct MaskprocConfig {
  std::size_t min_area = 200;        // at the reference patch size
  std::size_t reference_size = 256;  // min_area is scaled by (size / reference)^2
  std::size_t k = 4;
  std::size_t restarts = 64;
  std::size_t max_iters = 100;
};

struct ToyConfig {
  std::size_t count = 64;
  std::size_t size = 32;
  std::size_t validation = 8;
};

struct SampleConfig {
  std::size_t count = 16;
  double temperature = 1.0;
  bool greedy = false;
};

struct DemoConfig {
  std::size_t base_train = 16;
  std::size_t test = 8;
  std::size_t percent = 50;
};

struct ReportConfig {
  std::string metric = "missing_class_iou";
  std::string aggregation = "per_image_mean";
  std::optional<double> y_min;
  std::optional<double> y_max;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t num_classes = 4;
  std::size_t patch_size = 256;
  PathsConfig paths;
  vqvae::VqvaeConfig vqvae;
  pixelcnn::PixelcnnConfig pixelcnn;
  MaskprocConfig maskproc;
  std::vector<std::size_t> percents{50, 75, 100, 150, 200, 250, 300};
  ToyConfig toy;
  SampleConfig sample;
  DemoConfig demo;
  ReportConfig report;

  // vqvae/pixelcnn configs with the run seed and class count folded in.
  vqvae::VqvaeConfig vqvae_config() const {
    vqvae::VqvaeConfig c = vqvae;
    c.seed = derive_seed(seed, "vqvae");
    return c;
  }
  pixelcnn::PixelcnnConfig pixelcnn_config(std::size_t num_codes) const {
    pixelcnn::PixelcnnConfig c = pixelcnn;
    c.num_codes = num_codes;
    c.seed = derive_seed(seed, "pixelcnn");
    return c;
  }
  metrics::Aggregation aggregation() const {
    return report.aggregation == "pooled" ? metrics::Aggregation::pooled
                                          : metrics::Aggregation::per_image_mean;
  }
};

namespace detail {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string name) : name_(std::move(name)) {
    if (!j.is_object()) fail(ErrorKind::config, "config: '" + name_ + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) pending_.emplace(it.key(), &it.value());
  }

  template <typename T>
  void read(const char* key, T& field) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->second->is_number_unsigned()) throw std::invalid_argument("not unsigned");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->second->is_number()) throw std::invalid_argument("not a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->second->is_boolean()) throw std::invalid_argument("not a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->second->is_string()) throw std::invalid_argument("not a string");
      }
      field = it->second->template get<T>();
    } catch (const std::exception&) {
      fail(ErrorKind::config, "config: " + path(key) + " has the wrong type");
    }
    pending_.erase(it);
  }

  void read(const char* key, std::optional<double>& field) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return;
    if (!it->second->is_null()) {
      if (!it->second->is_number()) fail(ErrorKind::config, "config: " + path(key) + " must be a number");
      field = it->second->get<double>();
    }
    pending_.erase(it);
  }

  const Json* child(const char* key) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return nullptr;
    const Json* j = it->second;
    pending_.erase(it);
    return j;
  }

  void finish() const {
    if (!pending_.empty()) {
      fail(ErrorKind::config, "config: unknown key " + path(pending_.begin()->first));
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  std::string name_;
  std::map<std::string, const Json*> pending_;
};

}  // namespace detail

inline Json to_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["num_classes"] = c.num_classes;
  j["patch_size"] = c.patch_size;
  j["paths"] = {{"data_root", c.paths.data_root},
                {"checkpoint_dir", c.paths.checkpoint_dir},
                {"report_dir", c.paths.report_dir}};
  const auto& v = c.vqvae;
  j["vqvae"] = {{"K", v.num_embeddings},
                {"D", v.embedding_dim},
                {"hidden1", v.hidden1},
                {"hidden2", v.hidden2},
                {"beta", v.commitment_cost},
                {"decay", v.decay},
                {"epsilon", v.epsilon},
                {"learning_rate", v.learning_rate},
                {"batch_size", v.batch_size},
                {"updates", v.updates},
                {"checkpoint_interval", v.checkpoint_interval},
                {"ema", v.ema}};
  const auto& p = c.pixelcnn;
  j["pixelcnn"] = {{"layers", p.layers},
                   {"kernel_a", p.kernel_a},
                   {"kernel_b", p.kernel_b},
                   {"hidden", p.hidden},
                   {"learning_rate", p.learning_rate},
                   {"batch_size", p.batch_size},
                   {"updates", p.updates},
                   {"checkpoint_interval", p.checkpoint_interval},
                   {"validation_fraction", p.validation_fraction}};
  j["maskproc"] = {{"min_area", c.maskproc.min_area},
                   {"reference_size", c.maskproc.reference_size},
                   {"k", c.maskproc.k},
                   {"restarts", c.maskproc.restarts},
                   {"max_iters", c.maskproc.max_iters}};
  j["percents"] = c.percents;
  j["toy"] = {{"count", c.toy.count}, {"size", c.toy.size}, {"validation", c.toy.validation}};
  j["sample"] = {{"count", c.sample.count},
                 {"temperature", c.sample.temperature},
                 {"greedy", c.sample.greedy}};
  j["demo"] = {{"base_train", c.demo.base_train}, {"test", c.demo.test}, {"percent", c.demo.percent}};
  j["report"] = {{"metric", c.report.metric},
                 {"aggregation", c.report.aggregation},
                 {"y_min", c.report.y_min ? Json(*c.report.y_min) : Json(nullptr)},
                 {"y_max", c.report.y_max ? Json(*c.report.y_max) : Json(nullptr)}};
  return j;
}

inline void validate(const PipelineConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::config, "config: " + what);
  };
  check(c.num_classes >= 2 && c.num_classes <= 256, "num_classes must be in [2, 256]");
  check(c.patch_size >= 1, "patch_size must be positive");
  check(!c.paths.data_root.empty() && !c.paths.checkpoint_dir.empty() && !c.paths.report_dir.empty(),
        "paths must be non-empty");
  c.vqvae.validate();
  pixelcnn::PixelcnnConfig pc = c.pixelcnn;
  pc.num_codes = c.vqvae.num_embeddings;
  pc.validate();
  check(c.maskproc.min_area >= 1, "maskproc.min_area must be positive");
  check(c.maskproc.reference_size >= 1, "maskproc.reference_size must be positive");
  check(c.maskproc.k == c.num_classes, "maskproc.k must equal num_classes");
  check(c.maskproc.restarts >= 1 && c.maskproc.max_iters >= 1,
        "maskproc.restarts and maskproc.max_iters must be positive");
  check(!c.percents.empty(), "percents must not be empty");
  for (std::size_t p : c.percents) check(p >= 1, "percents must be positive integers");
  check(std::set<std::size_t>(c.percents.begin(), c.percents.end()).size() == c.percents.size(),
        "percents must be distinct");
  check(c.toy.size >= vqvae::kDownsample && c.toy.size % vqvae::kDownsample == 0,
        "toy.size must be a positive multiple of 4");
  check(c.toy.count >= 2 && c.toy.validation >= 1 && c.toy.validation < c.toy.count,
        "toy.validation must leave at least one training image");
  check(c.sample.count >= 1, "sample.count must be positive");
  check(c.sample.temperature > 0, "sample.temperature must be positive");
  check(c.demo.base_train >= 1 && c.demo.base_train <= c.toy.count - c.toy.validation,
        "demo.base_train must be in [1, toy training images]");
  check(c.demo.test >= 1, "demo.test must be positive");
  check(c.demo.percent >= 1, "demo.percent must be positive");
  check(c.report.aggregation == "per_image_mean" || c.report.aggregation == "pooled",
        "report.aggregation must be per_image_mean or pooled");
  if (c.report.y_min && c.report.y_max) check(*c.report.y_min < *c.report.y_max, "report.y_min must be below report.y_max");
}

inline PipelineConfig from_json(const Json& j) {
  PipelineConfig c;
  detail::Section top(j, "");
  top.read("seed", c.seed);
  top.read("num_classes", c.num_classes);
  top.read("patch_size", c.patch_size);
  c.maskproc.k = c.num_classes;
  if (const Json* s = top.child("paths")) {
    detail::Section p(*s, "paths");
    p.read("data_root", c.paths.data_root);
    p.read("checkpoint_dir", c.paths.checkpoint_dir);
    p.read("report_dir", c.paths.report_dir);
    p.finish();
  }
  if (const Json* s = top.child("vqvae")) {
    detail::Section v(*s, "vqvae");
    v.read("K", c.vqvae.num_embeddings);
    v.read("D", c.vqvae.embedding_dim);
    v.read("hidden1", c.vqvae.hidden1);
    v.read("hidden2", c.vqvae.hidden2);
    v.read("beta", c.vqvae.commitment_cost);
    v.read("decay", c.vqvae.decay);
    v.read("epsilon", c.vqvae.epsilon);
    v.read("learning_rate", c.vqvae.learning_rate);
    v.read("batch_size", c.vqvae.batch_size);
    v.read("updates", c.vqvae.updates);
    v.read("checkpoint_interval", c.vqvae.checkpoint_interval);
    v.read("ema", c.vqvae.ema);
    v.finish();
  }
  if (const Json* s = top.child("pixelcnn")) {
    detail::Section p(*s, "pixelcnn");
    p.read("layers", c.pixelcnn.layers);
    p.read("kernel_a", c.pixelcnn.kernel_a);
    p.read("kernel_b", c.pixelcnn.kernel_b);
    p.read("hidden", c.pixelcnn.hidden);
    p.read("learning_rate", c.pixelcnn.learning_rate);
    p.read("batch_size", c.pixelcnn.batch_size);
    p.read("updates", c.pixelcnn.updates);
    p.read("checkpoint_interval", c.pixelcnn.checkpoint_interval);
    p.read("validation_fraction", c.pixelcnn.validation_fraction);
    p.finish();
  }
  if (const Json* s = top.child("maskproc")) {
    detail::Section m(*s, "maskproc");
    m.read("min_area", c.maskproc.min_area);
    m.read("reference_size", c.maskproc.reference_size);
    m.read("k", c.maskproc.k);
    m.read("restarts", c.maskproc.restarts);
    m.read("max_iters", c.maskproc.max_iters);
    m.finish();
  }
  if (const Json* s = top.child("percents")) {
    if (!s->is_array()) fail(ErrorKind::config, "config: percents must be an array");
    c.percents.clear();
    for (const auto& v : *s) {
      if (!v.is_number_unsigned()) fail(ErrorKind::config, "config: percents must be positive integers");
      c.percents.push_back(v.get<std::size_t>());
    }
  }
  if (const Json* s = top.child("toy")) {
    detail::Section t(*s, "toy");
    t.read("count", c.toy.count);
    t.read("size", c.toy.size);
    t.read("validation", c.toy.validation);
    t.finish();
  }
  if (const Json* s = top.child("sample")) {
    detail::Section t(*s, "sample");
    t.read("count", c.sample.count);
    t.read("temperature", c.sample.temperature);
    t.read("greedy", c.sample.greedy);
    t.finish();
  }
  if (const Json* s = top.child("demo")) {
    detail::Section d(*s, "demo");
    d.read("base_train", c.demo.base_train);
    d.read("test", c.demo.test);
    d.read("percent", c.demo.percent);
    d.finish();
  }
  if (const Json* s = top.child("report")) {
    detail::Section r(*s, "report");
    r.read("metric", c.report.metric);
    r.read("aggregation", c.report.aggregation);
    r.read("y_min", c.report.y_min);
    r.read("y_max", c.report.y_max);
    r.finish();
  }
  top.finish();
  validate(c);
  return c;
}

// Reads and validates a config file; an absent path gives the defaults.
inline PipelineConfig load_config(const std::optional<fs::path>& path) {
  if (!path) {
    PipelineConfig c;
    validate(c);
    return c;
  }
  std::ifstream is(*path, std::ios::binary);
  if (!is) fail(ErrorKind::config, "config file not found: " + path->string());
  Json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path->string() + ": " + e.what());
  }
  return from_json(j);
}

inline std::string config_hash(const PipelineConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Run context

// Exclusive advisory lock on <dir>/.msf.lock for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path path = dir / ".msf.lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorKind::io, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fail(ErrorKind::io, "another pipeline run holds " + path.string());
    }
  }
  ~DirectoryLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

class Run {
 public:
  // `record` names the provenance file; it defaults to the subcommand.
  Run(std::string subcommand, PipelineConfig cfg, fs::path out_dir, std::string record = {})
      : subcommand_(std::move(subcommand)),
        record_(record.empty() ? subcommand_ : std::move(record)),
        cfg_(std::move(cfg)),
        out_(std::move(out_dir)) {
    fs::create_directories(out_);
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const fs::path& out_dir() const noexcept { return out_; }
  fs::path data() const { return out_ / cfg_.paths.data_root; }
  fs::path checkpoints() const { return out_ / cfg_.paths.checkpoint_dir; }
  fs::path reports() const { return out_ / cfg_.paths.report_dir; }
  Palette palette() const { return Palette::standard(cfg_.num_classes); }

  void input(const fs::path& p) { inputs_.push_back(display(p)); }
  void output(const fs::path& p) { outputs_.push_back(display(p)); }
  Json& details() { return details_; }
  void warn(const std::string& w) { warnings_.push_back(w); }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  // Paths inside the output directory are recorded relative to it.
  std::string display(const fs::path& p) const {
    const fs::path rel = p.lexically_proximate(out_);
    const auto first = rel.begin();
    if (rel.empty() || (first != rel.end() && *first == "..")) return p.generic_string();
    return rel.generic_string();
  }

  fs::path write_provenance() const {
    Json j;
    j["subcommand"] = subcommand_;
    j["seed"] = cfg_.seed;
    j["config_hash"] = config_hash(cfg_);
    j["config"] = to_json(cfg_);
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["warnings"] = warnings_;
    j["details"] = details_;
    const fs::path path = out_ / "provenance" / (record_ + ".json");
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write " + path.string());
    os << j.dump(2) << '\n';
    return path;
  }

 private:
  std::string subcommand_;
  std::string record_;
  PipelineConfig cfg_;
  fs::path out_;
  std::vector<std::string> inputs_, outputs_, warnings_;
  Json details_ = Json::object();
};

// ---------------------------------------------------------------------------
// Helpers

inline std::vector<fs::path> list_png(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::missing_artifact, "directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<fs::path> list_grids(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::missing_artifact, "directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mszg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorKind::missing_artifact, "no code grids in " + dir.string());
  return out;
}

// Manifest paths are stored relative to the manifest file.
inline void save_manifest(dataprep::DatasetManifest m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  for (auto& e : m.entries) {
    e.image = fs::absolute(e.image).lexically_relative(base).generic_string();
    if (!e.mask.empty()) e.mask = fs::absolute(e.mask).lexically_relative(base).generic_string();
  }
  m.save(path);
}

inline dataprep::DatasetManifest load_manifest(const fs::path& path) {
  dataprep::DatasetManifest m = dataprep::DatasetManifest::load(path);
  const fs::path base = fs::absolute(path).parent_path();
  for (auto& e : m.entries) {
    e.image = (base / e.image).lexically_normal().string();
    if (!e.mask.empty()) e.mask = (base / e.mask).lexically_normal().string();
  }
  return m;
}

inline DualImage load_dual_entry(const dataprep::ManifestEntry& e, const Palette& palette) {
  return dataprep::join_dual(png::read_rgb(e.image), png::read_mask(e.mask, palette));
}

inline void write_grid(const fs::path& path, const CodeGrid& grid) { write_codegrid(path, grid); }

inline CodeGrid read_grid(const fs::path& path) { return read_codegrid(path); }

inline std::string indexed_name(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return prefix + "_" + buf;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PatchifyOptions {
  fs::path image;
  fs::path mask;
  std::optional<std::size_t> patch_size;
};

inline void run_patchify(Run& run, const PatchifyOptions& opt) {
  const std::size_t size = opt.patch_size.value_or(run.config().patch_size);
  run.input(opt.image);
  run.input(opt.mask);
  const RgbImage image = png::read_rgb(opt.image);
  const ClassMask mask = png::read_mask(opt.mask, run.palette());
  const auto patches = dataprep::patchify(image, mask, size);
  const std::string stem = opt.image.stem().string();
  const fs::path dir = run.data() / "patches";
  for (const auto& p : patches) {
    char tag[48];
    std::snprintf(tag, sizeof tag, "_y%05zu_x%05zu.png", p.y, p.x);
    const fs::path ip = dir / "images" / (stem + tag), mp = dir / "masks" / (stem + tag);
    fs::create_directories(ip.parent_path());
    fs::create_directories(mp.parent_path());
    png::write_rgb(ip, p.image);
    png::write_mask(mp, p.mask);
    run.output(ip);
    run.output(mp);
  }
  run.details()["patch_size"] = size;
  run.details()["patches"] = patches.size();
}

struct JoinOptions {
  fs::path image;  // file or directory
  fs::path mask;   // file or directory with matching names
};

inline void run_join(Run& run, const JoinOptions& opt) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(opt.image)) {
    for (const auto& ip : list_png(opt.image)) pairs.emplace_back(ip, opt.mask / ip.filename());
  } else {
    pairs.emplace_back(opt.image, opt.mask);
  }
  const fs::path dir = run.data() / "joined";
  fs::create_directories(dir);
  for (const auto& [ip, mp] : pairs) {
    run.input(ip);
    run.input(mp);
    const DualImage dual =
        dataprep::join_dual(png::read_rgb(ip), png::read_mask(mp, run.palette()));
    const fs::path out = dir / ip.filename();
    png::write_dual(out, dual);
    run.output(out);
  }
  run.details()["joined"] = pairs.size();
}

struct SplitOptions {
  fs::path dual;  // file or directory
};

inline void run_split(Run& run, const SplitOptions& opt) {
  std::vector<fs::path> inputs =
      fs::is_directory(opt.dual) ? list_png(opt.dual) : std::vector<fs::path>{opt.dual};
  const fs::path dir = run.data() / "split";
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "planes");
  for (const auto& p : inputs) {
    run.input(p);
    const auto [image, plane] = dataprep::split_dual(png::read_dual(p));
    png::write_rgb(dir / "images" / p.filename(), image);
    png::write_plane(dir / "planes" / p.filename(), plane);
    run.output(dir / "images" / p.filename());
    run.output(dir / "planes" / p.filename());
  }
  run.details()["split"] = inputs.size();
}

struct ToygenOptions {
  std::string name = "toy";
  std::optional<std::size_t> count;
  std::optional<std::size_t> size;
  std::optional<std::size_t> validation;
  std::size_t test = 0;  // extra images placed in the test role
};

// Writes images/, masks/ and dual/ plus manifest.json. The first
// count - validation - test images are train, then validation, then test.
inline fs::path run_toygen(Run& run, const ToygenOptions& opt) {
  const auto& cfg = run.config();
  const std::size_t count = opt.count.value_or(cfg.toy.count);
  const std::size_t size = opt.size.value_or(cfg.toy.size);
  const std::size_t validation = opt.validation.value_or(cfg.toy.validation);
  require(count >= 1, "toygen: count must be positive");
  require(validation + opt.test <= count, "toygen: validation + test exceeds count");
  const auto samples = dataprep::generate_toy_dual_images(
      count, size, cfg.num_classes, derive_seed(cfg.seed, "toygen/" + opt.name));
  const fs::path dir = run.data() / opt.name;
  for (const char* sub : {"images", "masks", "dual"}) fs::create_directories(dir / sub);
  dataprep::DatasetManifest manifest;
  manifest.name = opt.name;
  manifest.provenance["generator"] = "toy";
  manifest.provenance["seed"] = cfg.seed;
  manifest.provenance["size"] = size;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string file = indexed_name(opt.name, i) + ".png";
    png::write_rgb(dir / "images" / file, samples[i].image);
    png::write_mask(dir / "masks" / file, samples[i].mask);
    png::write_dual(dir / "dual" / file, samples[i].dual);
    for (const char* sub : {"images", "masks", "dual"}) run.output(dir / sub / file);
    const std::size_t train_end = count - validation - opt.test;
    const dataprep::Role role = i < train_end                ? dataprep::Role::train
                                : i < train_end + validation ? dataprep::Role::validation
                                                             : dataprep::Role::test;
    manifest.entries.push_back(dataprep::ManifestEntry{role, dataprep::Source::real,
                                                       (dir / "images" / file).string(),
                                                       (dir / "masks" / file).string(), "toygen"});
  }
  const fs::path mpath = dir / "manifest.json";
  save_manifest(manifest, mpath);
  run.output(mpath);
  run.details()["count"] = count;
  run.details()["size"] = size;
  return mpath;
}

// ---------------------------------------------------------------------------
// Models

inline fs::path vqvae_stem(const Run& run) { return run.checkpoints() / "vqvae"; }
inline fs::path pixelcnn_stem(const Run& run) { return run.checkpoints() / "pixelcnn"; }

struct TrainVqvaeOptions {
  fs::path manifest;
  std::optional<std::size_t> updates;
};

inline vqvae::TrainResult run_train_vqvae(Run& run, const TrainVqvaeOptions& opt) {
  vqvae::VqvaeConfig cfg = run.config().vqvae_config();
  if (opt.updates) cfg.updates = *opt.updates;
  run.input(opt.manifest);
  const auto manifest = load_manifest(opt.manifest);
  std::vector<DualImage> train, validation;
  for (const auto& e : manifest.entries) {
    if (e.role == dataprep::Role::test) continue;
    run.input(e.image);
    run.input(e.mask);
    (e.role == dataprep::Role::train ? train : validation).push_back(load_dual_entry(e, run.palette()));
  }
  if (train.empty()) fail(ErrorKind::missing_artifact, "train-vqvae: manifest has no train entries");
  if (validation.empty()) run.warn("no validation entries; the training set is scored instead");
  const fs::path stem = vqvae_stem(run);
  auto result = vqvae::train_vqvae(train, validation, cfg, stem);
  const fs::path log = run.checkpoints() / "vqvae_log.csv";
  vqvae::write_log_csv(log, result.log);
  run.output(checkpoint_header_path(stem));
  run.output(checkpoint_data_path(stem));
  run.output(log);
  auto& d = run.details();
  d["train_images"] = train.size();
  d["validation_images"] = validation.size();
  d["updates"] = cfg.updates;
  d["initial_validation_error"] = result.initial_validation_error;
  d["best_validation_error"] = result.best_validation_error;
  d["best_step"] = result.best_step;
  return result;
}

struct EncodeOptions {
  fs::path manifest;  // train and validation entries are encoded
};

inline std::vector<fs::path> run_encode(Run& run, const EncodeOptions& opt) {
  const fs::path stem = vqvae_stem(run);
  run.input(checkpoint_header_path(stem));
  vqvae::VqvaeModel model = vqvae::VqvaeModel::load(stem);
  run.input(opt.manifest);
  const auto manifest = load_manifest(opt.manifest);
  std::vector<DualImage> duals;
  std::vector<std::string> names;
  for (const auto& e : manifest.entries) {
    if (e.role == dataprep::Role::test) continue;
    run.input(e.image);
    duals.push_back(load_dual_entry(e, run.palette()));
    names.push_back(fs::path(e.image).stem().string());
  }
  if (duals.empty()) fail(ErrorKind::missing_artifact, "encode: manifest has no train or validation entries");
  const auto grids = model.encode_to_codes(duals);
  const fs::path dir = run.data() / "grids";
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    out.push_back(dir / (names[i] + ".mszg"));
    write_grid(out.back(), grids[i]);
    run.output(out.back());
  }
  std::vector<std::size_t> usage(model.config().num_embeddings, 0);
  for (const auto& g : grids) {
    for (auto v : g.indices) ++usage[v];
  }
  run.details()["grids"] = grids.size();
  run.details()["code_usage"] = usage;
  return out;
}

struct TrainPixelcnnOptions {
  std::optional<fs::path> grid_dir;
  std::optional<std::size_t> updates;
};

inline pixelcnn::TrainResult run_train_pixelcnn(Run& run, const TrainPixelcnnOptions& opt) {
  const fs::path dir = opt.grid_dir.value_or(run.data() / "grids");
  std::vector<CodeGrid> grids;
  for (const auto& p : list_grids(dir)) {
    run.input(p);
    grids.push_back(read_grid(p));
  }
  pixelcnn::PixelcnnConfig cfg = run.config().pixelcnn_config(grids.front().num_codes);
  if (opt.updates) cfg.updates = *opt.updates;
  const fs::path stem = pixelcnn_stem(run);
  auto result = pixelcnn::train_pixelcnn(grids, cfg, stem);
  // Record the grid shape so sampling can default to it.
  Checkpoint ck = load_checkpoint(stem);
  ck.header["grid_height"] = grids.front().height;
  ck.header["grid_width"] = grids.front().width;
  save_checkpoint(stem, ck);
  const fs::path log = run.checkpoints() / "pixelcnn_log.csv";
  pixelcnn::write_log_csv(log, result.log);
  run.output(checkpoint_header_path(stem));
  run.output(checkpoint_data_path(stem));
  run.output(log);
  auto& d = run.details();
  d["grids"] = grids.size();
  d["train_grids"] = result.train_grids;
  d["validation_grids"] = result.validation_grids;
  d["updates"] = cfg.updates;
  d["initial_validation_loss"] = result.initial_validation_loss;
  d["best_validation_loss"] = result.best_validation_loss;
  d["best_step"] = result.best_step;
  return result;
}

struct SampleOptions {
  std::optional<std::size_t> count;
  std::optional<double> temperature;
  std::optional<bool> greedy;
  std::optional<std::size_t> grid_height;
  std::optional<std::size_t> grid_width;
};

// Samples code grids and decodes them to dual images. Sample i uses a seed
// derived from the run seed and i, so samples are independent of the
// worker count.
inline std::vector<fs::path> run_sample(Run& run, const SampleOptions& opt) {
  const auto& cfg = run.config();
  const fs::path pstem = pixelcnn_stem(run), vstem = vqvae_stem(run);
  run.input(checkpoint_header_path(pstem));
  run.input(checkpoint_header_path(vstem));
  const Checkpoint pck = load_checkpoint(pstem);
  const pixelcnn::PixelcnnModel prior = pixelcnn::PixelcnnModel::from_checkpoint(pck);
  vqvae::VqvaeModel model = vqvae::VqvaeModel::load(vstem);
  if (prior.num_codes() != model.config().num_embeddings) {
    fail(ErrorKind::config, "sample: PixelCNN K=" + std::to_string(prior.num_codes()) +
                                " does not match VQ-VAE K=" +
                                std::to_string(model.config().num_embeddings));
  }
  const std::size_t h = opt.grid_height.value_or(pck.header.value("grid_height", cfg.toy.size / 4));
  const std::size_t w = opt.grid_width.value_or(pck.header.value("grid_width", cfg.toy.size / 4));
  const std::size_t count = opt.count.value_or(cfg.sample.count);
  pixelcnn::SampleOptions so{opt.temperature.value_or(cfg.sample.temperature),
                             opt.greedy.value_or(cfg.sample.greedy)};
  std::vector<CodeGrid> grids(count);
  parallel_for(count, [&](std::size_t i) {
    grids[i] = pixelcnn::sample_codes(prior, h, w, derive_seed(cfg.seed, "sample/" + std::to_string(i)), so);
  });
  const auto duals = model.decode_codes(grids);
  const fs::path dir = run.data() / "samples";
  fs::create_directories(dir / "grids");
  fs::create_directories(dir / "dual");
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = indexed_name("sample", i);
    write_grid(dir / "grids" / (name + ".mszg"), grids[i]);
    png::write_dual(dir / "dual" / (name + ".png"), duals[i]);
    run.output(dir / "grids" / (name + ".mszg"));
    run.output(dir / "dual" / (name + ".png"));
    out.push_back(dir / "dual" / (name + ".png"));
  }
  run.details()["count"] = count;
  run.details()["grid"] = {h, w};
  run.details()["temperature"] = so.temperature;
  run.details()["greedy"] = so.greedy;
  return out;
}

// ---------------------------------------------------------------------------
// Post-processing, composition, evaluation, reporting

struct PostprocessOptions {
  std::optional<fs::path> dual_dir;
  std::optional<std::size_t> min_area;  // at the reference size
};

struct PostprocessSummary {
  std::size_t images = 0;
  std::vector<std::string> flagged;  // masks left without any foreground
  std::size_t min_area = 0;          // effective, at the image size
};

// Splits each dual image, recovers its mask and writes the pair into
// data/synthetic/{images,masks}, with report.json listing per-image class
// areas, removed regions and the images whose mask lost every foreground
// class (kept, only flagged).
inline PostprocessSummary run_postprocess(Run& run, const PostprocessOptions& opt) {
  const auto& cfg = run.config();
  const fs::path in = opt.dual_dir.value_or(run.data() / "samples" / "dual");
  const auto files = list_png(in);
  if (files.empty()) fail(ErrorKind::missing_artifact, "postprocess: no dual images in " + in.string());
  const fs::path dir = run.data() / "synthetic";
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  PostprocessSummary summary;
  summary.images = files.size();
  Json report = Json::object();
  report["images"] = Json::array();
  maskproc::KMeansOptions km{cfg.maskproc.max_iters, cfg.maskproc.restarts};
  for (const auto& f : files) {
    run.input(f);
    const DualImage dual = png::read_dual(f);
    const std::size_t area = maskproc::scaled_min_area_rect(
        dual.width, dual.height, opt.min_area.value_or(cfg.maskproc.min_area),
        cfg.maskproc.reference_size);
    summary.min_area = area;
    const auto [image, plane] = dataprep::split_dual(dual);
    const auto result = maskproc::postprocess_mask(
        plane, cfg.num_classes, area, derive_seed(cfg.seed, "kmeans/" + f.filename().string()), km);
    png::write_rgb(dir / "images" / f.filename(), image);
    png::write_mask(dir / "masks" / f.filename(), result.mask);
    run.output(dir / "images" / f.filename());
    run.output(dir / "masks" / f.filename());
    const bool flagged = result.foreground_missing();
    if (flagged) {
      summary.flagged.push_back(f.filename().string());
      run.warn(f.filename().string() + ": mask has no foreground class");
    }
    report["images"].push_back({{"image", f.filename().string()},
                                {"class_areas", result.class_areas},
                                {"removed_regions", result.removed_regions},
                                {"centroids", result.clusters.centroids},
                                {"min_area", area},
                                {"foreground_missing", flagged}});
  }
  report["flagged"] = summary.flagged;
  const fs::path rp = dir / "report.json";
  std::ofstream(rp, std::ios::binary) << report.dump(2) << '\n';
  run.output(rp);
  run.details()["images"] = summary.images;
  run.details()["flagged"] = summary.flagged;
  return summary;
}

struct ComposeOptions {
  fs::path base;  // manifest
  std::optional<fs::path> pool_dir;  // holds images/ and masks/
  std::vector<std::size_t> percents;  // empty: config percents
};

inline std::vector<fs::path> run_compose(Run& run, const ComposeOptions& opt) {
  const auto& cfg = run.config();
  run.input(opt.base);
  const auto base = load_manifest(opt.base);
  const fs::path pool_dir = opt.pool_dir.value_or(run.data() / "synthetic");
  std::vector<dataprep::PoolItem> pool;
  for (const auto& ip : list_png(pool_dir / "images")) {
    const fs::path mp = pool_dir / "masks" / ip.filename();
    if (!fs::exists(mp)) fail(ErrorKind::missing_artifact, "compose: no mask for " + ip.string());
    pool.push_back(dataprep::PoolItem{ip.string(), mp.string()});
  }
  const auto& percents = opt.percents.empty() ? cfg.percents : opt.percents;
  const fs::path dir = run.data() / "datasets";
  std::vector<fs::path> out;
  for (std::size_t p : percents) {
    const auto m = dataprep::compose_dataset(base, pool, p, derive_seed(cfg.seed, "compose/" + std::to_string(p)));
    out.push_back(dir / (base.name + "_p" + std::to_string(p) + ".json"));
    save_manifest(m, out.back());
    run.output(out.back());
  }
  run.details()["pool"] = pool.size();
  run.details()["percents"] = percents;
  return out;
}

struct EvaluateOptions {
  std::optional<fs::path> manifest;  // test entries give gt masks and the dataset tags
  std::optional<fs::path> gt_dir;
  fs::path pred_dir;
  std::optional<std::string> dataset;
  std::optional<double> percent;
  std::optional<std::uint64_t> synthetic_count;
};

// Sweep rows (percent units) for the metrics of one aggregate.
inline std::vector<report::SweepResult> sweep_rows(const metrics::Aggregate& a,
                                                   const std::string& dataset, double percent,
                                                   std::uint64_t count) {
  std::vector<report::SweepResult> rows;
  auto add = [&](const std::string& metric, double v) {
    rows.push_back(report::SweepResult{dataset, percent, count, metric, 100.0 * v, percent == 0});
  };
  add("accuracy", a.accuracy);
  add("miou", a.miou);
  add("missing_class_iou", a.missing_class_iou);
  for (std::size_t c = 0; c < a.class_iou.size(); ++c) {
    if (a.class_iou[c]) add("iou_" + std::to_string(c), *a.class_iou[c]);
  }
  for (std::size_t c = 0; c < a.class_missing_iou.size(); ++c) {
    if (a.class_missing_iou[c]) add("missing_class_iou_" + std::to_string(c), *a.class_missing_iou[c]);
  }
  return rows;
}

inline metrics::DatasetEvaluation run_evaluate(Run& run, const EvaluateOptions& opt) {
  const auto& cfg = run.config();
  const Palette palette = run.palette();
  std::vector<fs::path> gt_files;
  std::string dataset = opt.dataset.value_or("");
  double percent = opt.percent.value_or(0);
  std::uint64_t count = opt.synthetic_count.value_or(0);
  if (opt.manifest) {
    run.input(*opt.manifest);
    const auto m = load_manifest(*opt.manifest);
    for (const auto& e : m.with_role(dataprep::Role::test)) gt_files.push_back(e.mask);
    if (!opt.dataset) dataset = m.provenance.value("base", m.name);
    if (!opt.percent) percent = m.provenance.value("percent", 0.0);
    if (!opt.synthetic_count) {
      count = 0;
      for (const auto& e : m.entries) count += e.source == dataprep::Source::synthetic;
    }
  } else if (opt.gt_dir) {
    gt_files = list_png(*opt.gt_dir);
  } else {
    fail(ErrorKind::invalid_argument, "evaluate: give --manifest or --gt-dir");
  }
  if (gt_files.empty()) fail(ErrorKind::missing_artifact, "evaluate: no ground-truth masks");
  if (dataset.empty()) dataset = "dataset";
  std::vector<metrics::EvalPair> pairs;
  for (const auto& g : gt_files) {
    const fs::path pred = opt.pred_dir / g.filename();
    run.input(g);
    run.input(pred);
    if (!fs::exists(pred)) fail(ErrorKind::missing_artifact, "evaluate: no prediction for " + g.filename().string());
    pairs.push_back(metrics::EvalPair{g.stem().string(), png::read_mask(g, palette), png::read_mask(pred, palette)});
  }
  auto eval = metrics::evaluate_dataset(pairs, cfg.num_classes, dataset, percent);

  char tag[64];
  std::snprintf(tag, sizeof tag, "_p%g", percent);
  const fs::path dir = run.reports() / "eval" / (dataset + tag);
  metrics::write_per_image_csv(dir / "per_image.csv", eval.records);
  metrics::write_aggregate_csv(dir / "aggregate.csv", std::span(&eval, 1));
  const auto& agg = cfg.aggregation() == metrics::Aggregation::pooled ? eval.pooled : eval.per_image_mean;
  const auto rows = sweep_rows(agg, dataset, percent, count);
  report::write_metrics_csv(dir / "sweep.csv", rows);
  for (const char* f : {"per_image.csv", "aggregate.csv", "sweep.csv"}) run.output(dir / f);
  auto& d = run.details();
  d["dataset"] = dataset;
  d["percent"] = percent;
  d["synthetic_count"] = count;
  d["images"] = pairs.size();
  d["aggregation"] = metrics::to_string(agg.mode);
  d["accuracy"] = agg.accuracy;
  d["miou"] = agg.miou;
  d["missing_class_iou"] = agg.missing_class_iou;
  return eval;
}

struct ReportOptions {
  std::vector<fs::path> tables;  // empty: every reports/eval/*/sweep.csv
  std::optional<std::string> metric;
  std::optional<double> y_min;
  std::optional<double> y_max;
};

struct ReportSummary {
  fs::path table;
  fs::path plot;
  std::vector<fs::path> per_class;
  std::vector<std::string> omitted;
};

inline ReportSummary run_report(Run& run, const ReportOptions& opt) {
  const auto& cfg = run.config();
  std::vector<fs::path> tables = opt.tables;
  if (tables.empty()) {
    const fs::path eval = run.reports() / "eval";
    if (fs::is_directory(eval)) {
      for (const auto& e : fs::directory_iterator(eval)) {
        if (fs::exists(e.path() / "sweep.csv")) tables.push_back(e.path() / "sweep.csv");
      }
    }
    std::sort(tables.begin(), tables.end());
  }
  if (tables.empty()) fail(ErrorKind::missing_artifact, "report: no metric tables (run evaluate first)");
  std::vector<report::SweepResult> rows;
  for (const auto& t : tables) {
    run.input(t);
    for (auto& r : report::read_metrics_csv(t)) rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.percent, a.metric) < std::tie(b.dataset, b.percent, b.metric);
  });

  const std::string metric = opt.metric.value_or(cfg.report.metric);
  report::YRange y = report::default_y_range(metric);
  if (cfg.report.y_min) y.min = *cfg.report.y_min;
  if (cfg.report.y_max) y.max = *cfg.report.y_max;
  if (opt.y_min) y.min = *opt.y_min;
  if (opt.y_max) y.max = *opt.y_max;
  if (!(y.min < y.max)) fail(ErrorKind::config, "report: y-min must be below y-max");

  ReportSummary s;
  s.table = run.reports() / "metrics.csv";
  report::write_metrics_csv(s.table, rows);
  run.output(s.table);
  auto rendered = report::render_sweep_svg(rows, metric, y);
  s.plot = run.reports() / (metric + ".svg");
  report::write_text(s.plot, rendered.svg);
  run.output(s.plot);
  s.omitted = rendered.omitted;
  for (const auto& w : rendered.warnings) run.warn(w);
  const auto problems = report::cross_check_svg(rendered.svg, rows, metric, y);
  if (!problems.empty()) fail(ErrorKind::numeric, "report: plot does not match table: " + problems.front());

  // Per-class plots span 0-100 so that zero values stay visible.
  const auto per_class = report::render_per_class_svg(rows, metric, cfg.num_classes,
                                                      report::YRange{0, 100}, run.reports() / "per_class");
  for (const auto& f : per_class.files) {
    s.per_class.push_back(f);
    run.output(f);
  }
  for (const auto& w : per_class.warnings) run.warn(w);
  run.details()["metric"] = metric;
  run.details()["y_range"] = {y.min, y.max};
  run.details()["rows"] = rows.size();
  run.details()["omitted"] = s.omitted;
  return s;
}

// ---------------------------------------------------------------------------
// Demo

struct DemoSummary {
  double vqvae_initial_error = 0;
  double vqvae_best_error = 0;
  double pixelcnn_initial_loss = 0;
  double pixelcnn_best_loss = 0;
  std::size_t samples = 0;
  std::size_t min_area = 0;
  std::vector<std::string> flagged;
  std::vector<std::string> verify_failures;
  fs::path plot;
};

// Checks the module invariants of the demo's intermediate artifacts.
inline std::vector<std::string> verify_artifacts(const Run& run, std::size_t min_area) {
  std::vector<std::string> bad;
  const auto& cfg = run.config();
  const std::size_t K = cfg.vqvae.num_embeddings;
  for (const fs::path& dir : {run.data() / "grids", run.data() / "samples" / "grids"}) {
    for (const auto& p : list_grids(dir)) {
      try {
        const CodeGrid g = read_grid(p);
        if (g.num_codes != K) bad.push_back(p.filename().string() + ": wrong K");
      } catch (const Error& e) {
        bad.push_back(p.filename().string() + ": " + e.what());
      }
    }
  }
  for (const auto& p : list_png(run.data() / "synthetic" / "masks")) {
    try {
      const ClassMask m = png::read_mask(p, run.palette());
      const auto regions = maskproc::label_components(m, maskproc::Connectivity::eight);
      for (const auto& r : regions) {
        if (regions.size() > 1 && r.area < min_area) {
          bad.push_back(p.filename().string() + ": region of " + std::to_string(r.area) + " pixels");
          break;
        }
      }
    } catch (const Error& e) {
      bad.push_back(p.filename().string() + ": " + e.what());
    }
  }
  for (const auto& e : fs::directory_iterator(run.data() / "datasets")) {
    try {
      load_manifest(e.path()).validate();
    } catch (const Error& ex) {
      bad.push_back(e.path().filename().string() + ": " + ex.what());
    }
  }
  const auto rows = report::read_metrics_csv(run.reports() / "metrics.csv");
  std::ifstream is(run.reports() / (cfg.report.metric + ".svg"), std::ios::binary);
  const std::string svg((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  report::YRange y = report::default_y_range(cfg.report.metric);
  if (cfg.report.y_min) y.min = *cfg.report.y_min;
  if (cfg.report.y_max) y.max = *cfg.report.y_max;
  for (const auto& p : report::cross_check_svg(svg, rows, cfg.report.metric, y)) bad.push_back("plot: " + p);
  return bad;
}

// toygen -> train-vqvae -> encode -> train-pixelcnn -> sample ->
// postprocess -> compose -> evaluate (gt passthrough) -> report. Each step
// writes its own provenance record, named demo.<step>.
inline DemoSummary run_demo(Run& run) {
  const auto& cfg = run.config();
  DemoSummary s;
  auto step = [&](const std::string& subcommand, const std::string& name, auto&& fn) {
    Run r(subcommand, cfg, run.out_dir(), "demo." + name);
    auto result = fn(r);
    for (const auto& w : r.warnings()) run.warn(w);
    run.output(r.write_provenance());
    return result;
  };

  const fs::path toy = step("toygen", "toygen", [](Run& r) { return run_toygen(r, ToygenOptions{}); });
  const fs::path toy_test = step("toygen", "toygen_test", [&](Run& r) {
    ToygenOptions o;
    o.name = "toy_test";
    o.count = cfg.demo.test;
    o.validation = 0;
    o.test = cfg.demo.test;
    return run_toygen(r, o);
  });

  const auto vq = step("train-vqvae", "train_vqvae", [&](Run& r) {
    return run_train_vqvae(r, TrainVqvaeOptions{toy, std::nullopt});
  });
  s.vqvae_initial_error = vq.initial_validation_error;
  s.vqvae_best_error = vq.best_validation_error;
  step("encode", "encode", [&](Run& r) { return run_encode(r, EncodeOptions{toy}); });
  const auto pc = step("train-pixelcnn", "train_pixelcnn",
                       [](Run& r) { return run_train_pixelcnn(r, TrainPixelcnnOptions{}); });
  s.pixelcnn_initial_loss = pc.initial_validation_loss;
  s.pixelcnn_best_loss = pc.best_validation_loss;
  s.samples = step("sample", "sample", [](Run& r) { return run_sample(r, SampleOptions{}); }).size();
  const auto post = step("postprocess", "postprocess",
                         [](Run& r) { return run_postprocess(r, PostprocessOptions{}); });
  s.flagged = post.flagged;
  s.min_area = post.min_area;

  // Base dataset: the first base_train toy training images, the toy
  // validation images and the separate toy test set.
  const auto toy_m = load_manifest(toy), test_m = load_manifest(toy_test);
  dataprep::DatasetManifest base;
  base.name = "toy_base";
  std::size_t taken = 0;
  for (const auto& e : toy_m.entries) {
    if (e.role == dataprep::Role::train && taken < cfg.demo.base_train) {
      base.entries.push_back(e);
      ++taken;
    } else if (e.role == dataprep::Role::validation) {
      base.entries.push_back(e);
    }
  }
  for (const auto& e : test_m.entries) base.entries.push_back(e);
  const fs::path base_path = run.data() / "datasets" / "toy_base.json";
  save_manifest(base, base_path);
  run.output(base_path);
  const auto composed = step("compose", "compose", [&](Run& r) {
    return run_compose(r, ComposeOptions{base_path, std::nullopt, {cfg.demo.percent}});
  });

  const fs::path pred = run.data() / "toy_test" / "masks";
  std::vector<fs::path> manifests{base_path};
  manifests.insert(manifests.end(), composed.begin(), composed.end());
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    step("evaluate", "evaluate_" + std::to_string(i), [&](Run& r) {
      EvaluateOptions o;
      o.manifest = manifests[i];
      o.pred_dir = pred;
      return run_evaluate(r, o);
    });
  }
  s.plot = step("report", "report", [](Run& r) { return run_report(r, ReportOptions{}); }).plot;

  s.verify_failures = verify_artifacts(run, s.min_area);
  auto& d = run.details();
  d["vqvae_initial_validation_error"] = s.vqvae_initial_error;
  d["vqvae_best_validation_error"] = s.vqvae_best_error;
  d["vqvae_error_ratio"] = s.vqvae_best_error / s.vqvae_initial_error;
  d["pixelcnn_initial_validation_loss"] = s.pixelcnn_initial_loss;
  d["pixelcnn_best_validation_loss"] = s.pixelcnn_best_loss;
  d["samples"] = s.samples;
  d["min_area"] = s.min_area;
  d["flagged"] = s.flagged;
  d["verify_failures"] = s.verify_failures;
  if (!s.verify_failures.empty()) {
    fail(ErrorKind::numeric, "demo: artifact check failed: " + s.verify_failures.front());
  }
  return s;
}

}  // namespace msf::pipeline
