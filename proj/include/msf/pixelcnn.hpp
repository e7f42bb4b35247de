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

// Masked-convolution autoregressive prior over code grids.
//
//   one-hot(K) -> conv A (kernel_a) -> relu -> [conv B (kernel_b) -> relu] x layers -> conv 1x1 to K
//
// Plain stacked masks leave the usual blind spot to the upper right of each
// cell; the stack never sees a cell at or after the one being predicted.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msf/autodiff.hpp"
#include "msf/checkpoint.hpp"
#include "msf/codegrid.hpp"
#include "msf/common.hpp"
#include "msf/tensor.hpp"

namespace msf::pixelcnn {

enum class MaskKind { A, B };

// 1 above the center row, 1 left of center within it, the center itself
// only for kind B. Returned as a kh x kw plane.
inline Tensor<float> build_mask(MaskKind kind, std::size_t kh, std::size_t kw) {
  require(kh % 2 == 1 && kw % 2 == 1,
          "build_mask: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " must be odd");
  Tensor<float> m({kh, kw});
  const std::size_t ci = kh / 2, cj = kw / 2;
  for (std::size_t i = 0; i < kh; ++i) {
    for (std::size_t j = 0; j < kw; ++j) {
      const bool on = i < ci || (i == ci && (j < cj || (j == cj && kind == MaskKind::B)));
      m[i * kw + j] = on ? 1.0f : 0.0f;
    }
  }
  return m;
}

// The mask replicated over the out x in channel axes.
inline Tensor<float> build_mask(MaskKind kind, std::size_t out, std::size_t in, std::size_t kh,
                                std::size_t kw) {
  const Tensor<float> plane = build_mask(kind, kh, kw);
  Tensor<float> m({out, in, kh, kw});
  for (std::size_t oc = 0; oc < out * in; ++oc) {
    std::copy(plane.raw(), plane.raw() + plane.size(), m.raw() + oc * plane.size());
  }
  return m;
}

struct PixelcnnConfig {
  std::size_t num_codes = 10;  // K
  std::size_t layers = 6;      // kind-B layers
  std::size_t kernel_a = 7;
  std::size_t kernel_b = 3;
  std::size_t hidden = 64;
  double learning_rate = 3e-4;
  std::size_t batch_size = 8;
  std::size_t updates = 1500;
  std::size_t checkpoint_interval = 100;
  double validation_fraction = 0.1;
  bool zero_init_output = false;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_codes >= 1 && num_codes <= 65536, "pixelcnn: K must be in [1, 65536]",
            ErrorKind::config);
    require(kernel_a % 2 == 1 && kernel_b % 2 == 1, "pixelcnn: kernels must be odd",
            ErrorKind::config);
    require(hidden >= 1, "pixelcnn: hidden width must be positive", ErrorKind::config);
    require(learning_rate > 0, "pixelcnn: learning rate must be positive", ErrorKind::config);
    require(batch_size >= 1, "pixelcnn: batch size must be positive", ErrorKind::config);
    require(checkpoint_interval >= 1, "pixelcnn: checkpoint interval must be positive",
            ErrorKind::config);
    require(validation_fraction >= 0 && validation_fraction < 1,
            "pixelcnn: validation fraction must be in [0, 1)", ErrorKind::config);
  }
};

// N x K x H x W one-hot planes.
inline Tensor<float> one_hot(std::span<const CodeGrid> grids, std::size_t num_codes) {
  require(!grids.empty(), "one_hot: no grids");
  const std::size_t h = grids[0].height, w = grids[0].width, plane = h * w;
  Tensor<float> x({grids.size(), num_codes, h, w});
  for (std::size_t n = 0; n < grids.size(); ++n) {
    const CodeGrid& g = grids[n];
    require(g.height == h && g.width == w, "one_hot: grids differ in size");
    require(g.num_codes == num_codes,
            "one_hot: grid K=" + std::to_string(g.num_codes) + " but model K=" +
                std::to_string(num_codes));
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = g.indices[i];
      if (k >= num_codes) {
        fail(ErrorKind::invalid_argument,
             "one_hot: code index " + std::to_string(k) + " >= K=" + std::to_string(num_codes));
      }
      x[(n * num_codes + k) * plane + i] = 1.0f;
    }
  }
  return x;
}

class PixelcnnModel {
 public:
  PixelcnnModel() = default;

  explicit PixelcnnModel(const PixelcnnConfig& cfg) : config_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t K = cfg.num_codes, H = cfg.hidden;
    layers_.push_back(make_layer(H, K, cfg.kernel_a, MaskKind::A, rng));
    for (std::size_t i = 0; i < cfg.layers; ++i) {
      layers_.push_back(make_layer(H, H, cfg.kernel_b, MaskKind::B, rng));
    }
    layers_.push_back(make_layer(K, H, 1, MaskKind::B, rng));
    if (cfg.zero_init_output) {
      layers_.back().weight.value.fill(0.0f);
      layers_.back().bias.value.fill(0.0f);
    }
  }

  const PixelcnnConfig& config() const noexcept { return config_; }
  std::size_t num_codes() const noexcept { return config_.num_codes; }

  // Rows of context above a cell that can reach its logits.
  std::size_t receptive_rows() const noexcept {
    return config_.kernel_a / 2 + config_.layers * (config_.kernel_b / 2);
  }

  std::vector<Parameter<float>*> parameters() {
    std::vector<Parameter<float>*> out;
    for (Layer& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  const Tensor<float>& mask(std::size_t layer) const { return layers_.at(layer).mask; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  ad::Var logits(ad::Graph<float>& g, ad::Var one_hot_input, bool train) {
    if (!train) return logits(g, one_hot_input);
    ad::Var h = one_hot_input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      h = layer(g, h, l, g.param(l.weight), g.param(l.bias), i + 1 < layers_.size());
    }
    return h;
  }

  ad::Var logits(ad::Graph<float>& g, ad::Var one_hot_input) const {
    ad::Var h = one_hot_input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      h = layer(g, h, l, g.frozen(l.weight), g.frozen(l.bias), i + 1 < layers_.size());
    }
    return h;
  }

  // N x K x H x W logits for a batch of grids.
  Tensor<float> forward_logits(std::span<const CodeGrid> grids) const {
    ad::Graph<float> g;
    ad::Var out = logits(g, g.constant(one_hot(grids, config_.num_codes)));
    return g.value(out);
  }

  Tensor<float> forward_logits(const CodeGrid& grid) const {
    return forward_logits(std::span<const CodeGrid>(&grid, 1));
  }

  // Mean per-cell negative log-likelihood of the grids under the model.
  double nll(std::span<const CodeGrid> grids) const {
    double total = 0;
    std::size_t cells = 0;
    for (std::size_t start = 0; start < grids.size(); start += kInferenceBatch) {
      auto chunk = grids.subspan(start, std::min(kInferenceBatch, grids.size() - start));
      ad::Graph<float> g;
      ad::Var out = logits(g, g.constant(one_hot(chunk, config_.num_codes)));
      ad::Var loss = ad::softmax_cross_entropy(g, out, targets(chunk));
      const std::size_t n = chunk.size() * chunk[0].height * chunk[0].width;
      total += static_cast<double>(g.value(loss)[0]) * static_cast<double>(n);
      cells += n;
    }
    return total / static_cast<double>(cells);
  }

  static std::vector<std::int32_t> targets(std::span<const CodeGrid> grids) {
    std::vector<std::int32_t> t;
    for (const auto& g : grids) t.insert(t.end(), g.indices.begin(), g.indices.end());
    return t;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.header["format"] = "msf-pixelcnn";
    ck.header["version"] = 1;
    ck.header["K"] = config_.num_codes;
    ck.header["layers"] = config_.layers;
    ck.header["kernel_a"] = config_.kernel_a;
    ck.header["kernel_b"] = config_.kernel_b;
    ck.header["hidden"] = config_.hidden;
    ck.header["input_encoding"] = "one-hot";
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      ck.tensors.emplace_back(layer_name(i) + ".weight", layers_[i].weight.value);
      ck.tensors.emplace_back(layer_name(i) + ".bias", layers_[i].bias.value);
    }
    return ck;
  }

  static PixelcnnModel from_checkpoint(const Checkpoint& ck) {
    if (ck.header.value("format", std::string{}) != "msf-pixelcnn") {
      fail(ErrorKind::io, "not a PixelCNN checkpoint");
    }
    if (ck.header.value("input_encoding", std::string{}) != "one-hot") {
      fail(ErrorKind::io, "PixelCNN checkpoint has an unsupported input encoding");
    }
    PixelcnnConfig cfg;
    cfg.num_codes = ck.header.at("K");
    cfg.layers = ck.header.at("layers");
    cfg.kernel_a = ck.header.at("kernel_a");
    cfg.kernel_b = ck.header.at("kernel_b");
    cfg.hidden = ck.header.at("hidden");
    PixelcnnModel m(cfg);
    for (std::size_t i = 0; i < m.layers_.size(); ++i) {
      Layer& l = m.layers_[i];
      l.weight = Parameter<float>(ck.get(m.layer_name(i) + ".weight", l.weight.value.dims()));
      l.bias = Parameter<float>(ck.get(m.layer_name(i) + ".bias", l.bias.value.dims()));
    }
    return m;
  }

  void save(const std::filesystem::path& stem, const Json& extra = Json::object()) const {
    Checkpoint ck = to_checkpoint();
    for (auto it = extra.begin(); it != extra.end(); ++it) ck.header[it.key()] = it.value();
    save_checkpoint(stem, ck);
  }

  static PixelcnnModel load(const std::filesystem::path& stem) {
    return from_checkpoint(load_checkpoint(stem));
  }

 private:
  static constexpr std::size_t kInferenceBatch = 32;

  struct Layer {
    Parameter<float> weight;
    Parameter<float> bias;
    Tensor<float> mask;
  };

  static ad::Var layer(ad::Graph<float>& g, ad::Var x, const Layer& l, ad::Var w, ad::Var b,
                       bool activate) {
    const std::size_t k = l.weight.value.dim(2);
    ad::Var y = ad::conv2d(g, x, w, b, ad::Conv2dOptions{1, k / 2}, &l.mask);
    return activate ? ad::relu(g, y) : y;
  }

  static Layer make_layer(std::size_t out, std::size_t in, std::size_t k, MaskKind kind,
                          Rng& rng) {
    const std::size_t fan_in = in * k * k;
    return Layer{fan_in_uniform<float>({out, in, k, k}, fan_in, rng),
                 fan_in_uniform<float>({out}, fan_in, rng), build_mask(kind, out, in, k, k)};
  }

  std::string layer_name(std::size_t i) const {
    if (i == 0) return "conv_a";
    if (i + 1 == layers_.size()) return "output";
    return "conv_b" + std::to_string(i);
  }

  PixelcnnConfig config_;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Sampling

struct SampleOptions {
  double temperature = 1.0;
  bool greedy = false;  // argmax at every cell; ignores temperature and seed
};

// Draws from softmax(logits / temperature); ties in greedy mode go to the
// lowest index.
inline std::size_t pick_code(std::span<const double> logits, const SampleOptions& opt, Rng& rng) {
  if (opt.greedy) {
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                    logits.begin());
  }
  double top = -std::numeric_limits<double>::infinity();
  for (double l : logits) top = std::max(top, l / opt.temperature);
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] / opt.temperature - top);
    sum += p[k];
  }
  double u = rng.uniform() * sum;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (u < p[k]) return k;
    u -= p[k];
  }
  // Rounding left u at the top of the range; take the last nonzero entry.
  for (std::size_t k = p.size(); k-- > 0;) {
    if (p[k] > 0) return k;
  }
  return 0;
}

// Raster-order ancestral sampling from an all-zero grid. Each cell is
// scored from a window of rows just tall enough to hold its receptive
// field, which matches a full-grid pass up to float rounding.
inline CodeGrid sample_codes(const PixelcnnModel& model, std::size_t height, std::size_t width,
                             std::uint64_t seed, const SampleOptions& opt = {}) {
  require(height > 0 && width > 0, "sample_codes: grid dims must be positive");
  if (!opt.greedy) {
    require(opt.temperature > 0 && std::isfinite(opt.temperature),
            "sample_codes: temperature must be positive");
  }
  const std::size_t K = model.num_codes();
  CodeGrid grid(height, width, K);
  Rng rng(seed);
  const std::size_t reach = model.receptive_rows();
  std::vector<double> cell(K);
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t top = i > reach ? i - reach : 0;
    CodeGrid window(i - top + 1, width, K);
    for (std::size_t j = 0; j < width; ++j) {
      window.indices.assign(grid.indices.begin() + static_cast<std::ptrdiff_t>(top * width),
                            grid.indices.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
      const Tensor<float> logits = model.forward_logits(window);
      const std::size_t plane = window.height * width, at = (i - top) * width + j;
      for (std::size_t k = 0; k < K; ++k) cell[k] = logits[k * plane + at];
      for (double v : cell) {
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "sample_codes: non-finite logits");
      }
      grid.indices[i * width + j] = static_cast<std::uint16_t>(pick_code(cell, opt, rng));
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t step = 0;
  std::optional<double> train_loss;
  std::optional<double> validation_loss;
};

struct TrainResult {
  PixelcnnModel best;
  std::vector<TrainLogRow> log;
  double initial_validation_loss = 0;
  double best_validation_loss = 0;
  std::size_t best_step = 0;
  std::size_t train_grids = 0;
  std::size_t validation_grids = 0;
};

inline void write_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os << "step,train_loss,validation_loss\n";
  auto field = [&](const std::optional<double>& v) {
    if (!v) return;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", *v);
    os << buf;
  };
  for (const auto& r : log) {
    os << r.step << ',';
    field(r.train_loss);
    os << ',';
    field(r.validation_loss);
    os << '\n';
  }
}

// Teacher-forced per-cell cross-entropy. The grids are shuffled with the
// seed and the last validation_fraction of them (at least one when there
// are two or more) is held out; with a single grid it is scored on itself.
inline TrainResult train_pixelcnn(std::span<const CodeGrid> grids, const PixelcnnConfig& cfg,
                                  const std::optional<std::filesystem::path>& checkpoint_stem = {}) {
  cfg.validate();
  require(!grids.empty(), "train_pixelcnn: no grids");
  for (const auto& g : grids) {
    g.validate();
    require(g.height == grids[0].height && g.width == grids[0].width,
            "train_pixelcnn: grids differ in size");
    require(g.num_codes == cfg.num_codes,
            "train_pixelcnn: grid K=" + std::to_string(g.num_codes) + " but config K=" +
                std::to_string(cfg.num_codes));
  }

  Rng rng(cfg.seed ^ 0x9c4eULL);
  std::vector<std::size_t> order(grids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t held = static_cast<std::size_t>(
      std::floor(cfg.validation_fraction * static_cast<double>(grids.size()) + 0.5));
  if (cfg.validation_fraction > 0 && grids.size() >= 2) held = std::max<std::size_t>(held, 1);
  held = std::min(held, grids.size() - 1);
  std::vector<CodeGrid> train, validation;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i + held < order.size() ? train : validation).push_back(grids[order[i]]);
  }
  const std::vector<CodeGrid>& scored = validation.empty() ? train : validation;

  PixelcnnModel model(cfg);
  TrainResult result;
  result.train_grids = train.size();
  result.validation_grids = validation.size();
  auto evaluate = [&](std::size_t step) {
    const double loss = model.nll(scored);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::numeric,
           "train_pixelcnn: non-finite validation loss at step " + std::to_string(step));
    }
    if (step == 0 || loss < result.best_validation_loss) {
      result.best_validation_loss = loss;
      result.best_step = step;
      result.best = model;
      if (checkpoint_stem) {
        model.save(*checkpoint_stem, Json{{"best_validation_loss", loss}, {"best_step", step}});
      }
    }
    return loss;
  };
  result.initial_validation_loss = evaluate(0);
  result.log.push_back(TrainLogRow{0, std::nullopt, result.initial_validation_loss});

  std::vector<std::size_t> pick(train.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  rng.shuffle(pick);
  std::size_t cursor = 0;
  std::vector<CodeGrid> batch;
  auto params = model.parameters();
  for (std::size_t step = 1; step <= cfg.updates; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == pick.size()) {
        rng.shuffle(pick);
        cursor = 0;
      }
      batch.push_back(train[pick[cursor++]]);
    }
    ad::Graph<float> g;
    ad::Var out = model.logits(g, g.constant(one_hot(batch, cfg.num_codes)), true);
    ad::Var loss = ad::softmax_cross_entropy(g, out, PixelcnnModel::targets(batch));
    const double value = g.value(loss)[0];
    if (!std::isfinite(value)) {
      fail(ErrorKind::numeric, "train_pixelcnn: non-finite loss at step " + std::to_string(step));
    }
    g.backward(loss);
    adam_step<float>(params, cfg.learning_rate);

    TrainLogRow row{step, value, std::nullopt};
    if (step % cfg.checkpoint_interval == 0 || step == cfg.updates) {
      row.validation_loss = evaluate(step);
    }
    result.log.push_back(row);
  }
  return result;
}

}  // namespace msf::pixelcnn
