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

// Vector-quantized autoencoder over 4-channel dual images.
//
//   encoder: conv 4x4/2 -> relu -> conv 4x4/2 -> relu -> conv 1x1 to D
//   quantizer: nearest of K codebook vectors, EMA-updated codebook
//   decoder: conv 1x1 -> relu -> up x2 -> conv 3x3 -> relu -> up x2 -> conv 3x3 to 4
//
// The two stride-2 stages fix the image-to-grid ratio at 4.

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
#include "msf/image.hpp"
#include "msf/tensor.hpp"

namespace msf::vqvae {

inline constexpr std::size_t kChannels = 4;
inline constexpr std::size_t kDownsample = 4;

struct VqvaeConfig {
  std::size_t num_embeddings = 10;  // K
  std::size_t embedding_dim = 16;   // D
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 64;
  double commitment_cost = 0.25;  // beta
  double decay = 0.99;
  double epsilon = 1e-5;
  double learning_rate = 3e-4;
  std::size_t batch_size = 8;
  std::size_t updates = 3000;
  std::size_t checkpoint_interval = 100;
  std::uint64_t seed = 0;
  bool ema = true;

  void validate() const {
    require(num_embeddings >= 1, "vqvae: K must be at least 1", ErrorKind::config);
    require(num_embeddings <= 65536, "vqvae: K must fit in 16 bits", ErrorKind::config);
    require(embedding_dim >= 1, "vqvae: D must be at least 1", ErrorKind::config);
    require(hidden1 >= 1 && hidden2 >= 1, "vqvae: channel widths must be positive",
            ErrorKind::config);
    require(commitment_cost >= 0, "vqvae: beta must be non-negative", ErrorKind::config);
    require(decay >= 0 && decay < 1, "vqvae: decay must be in [0, 1)", ErrorKind::config);
    require(epsilon > 0, "vqvae: epsilon must be positive", ErrorKind::config);
    require(learning_rate > 0, "vqvae: learning rate must be positive", ErrorKind::config);
    require(batch_size >= 1, "vqvae: batch size must be positive", ErrorKind::config);
    require(checkpoint_interval >= 1, "vqvae: checkpoint interval must be positive",
            ErrorKind::config);
  }
};

// ---------------------------------------------------------------------------
// Normalization: each 8-bit channel maps affinely onto [-1, 1].

inline float normalize_value(std::uint8_t v) {
  return static_cast<float>(2.0 * static_cast<double>(v) / 255.0 - 1.0);
}

// Inverse map, clamped to [0, 255] and rounded half up.
inline std::uint8_t denormalize_value(float x) {
  const double v = (static_cast<double>(x) + 1.0) * 127.5;
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

inline Tensor<float> normalize(std::span<const DualImage> batch) {
  require(!batch.empty(), "normalize: empty batch");
  const std::size_t W = batch[0].width, H = batch[0].height;
  Tensor<float> t({batch.size(), kChannels, H, W});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    require(batch[n].width == W && batch[n].height == H, "normalize: mixed image sizes in batch");
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < kChannels; ++c)
          t.at(n, c, y, x) = normalize_value(batch[n].channel(x, y, c));
  }
  return t;
}

inline Tensor<float> normalize(const DualImage& dual) {
  return normalize(std::span<const DualImage>(&dual, 1));
}

inline std::vector<DualImage> denormalize(const Tensor<float>& t) {
  require(t.rank() == 4 && t.dim(1) == kChannels, "denormalize: expected N x 4 x H x W");
  std::vector<DualImage> out;
  for (std::size_t n = 0; n < t.dim(0); ++n) {
    DualImage d(t.dim(3), t.dim(2));
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x)
        for (std::size_t c = 0; c < kChannels; ++c)
          d.channel(x, y, c) = denormalize_value(t.at(n, c, y, x));
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Codebook and quantizer

struct Codebook {
  std::size_t num_embeddings = 0;
  std::size_t dim = 0;
  double decay = 0.99;
  double epsilon = 1e-5;
  Tensor<float> vectors;       // K x D
  Tensor<float> cluster_size;  // K, EMA of assignment counts
  Tensor<float> vector_sums;   // K x D, EMA of assigned vector sums

  Codebook() = default;

  // Vectors i.i.d. uniform in +-1/K. EMA statistics start at one observation
  // located at the vector itself.
  Codebook(std::size_t k, std::size_t d, double decay_, double epsilon_, Rng& rng)
      : num_embeddings(k),
        dim(d),
        decay(decay_),
        epsilon(epsilon_),
        vectors(Tensor<float>::uniform({k, d}, -1.0f / static_cast<float>(k),
                                       1.0f / static_cast<float>(k), rng)),
        cluster_size({k}, 1.0f),
        vector_sums(vectors) {}

  // Builds a codebook from explicit vectors (statistics as above).
  static Codebook from_vectors(Tensor<float> v, double decay_ = 0.99, double epsilon_ = 1e-5) {
    require(v.rank() == 2, "codebook vectors must be K x D");
    Codebook cb;
    cb.num_embeddings = v.dim(0);
    cb.dim = v.dim(1);
    cb.decay = decay_;
    cb.epsilon = epsilon_;
    cb.cluster_size = Tensor<float>({cb.num_embeddings}, 1.0f);
    cb.vector_sums = v;
    cb.vectors = std::move(v);
    return cb;
  }
};

struct Quantized {
  std::size_t batch = 0, height = 0, width = 0;
  std::vector<std::int32_t> indices;  // N x H x W
  Tensor<float> z_q;                  // N x D x H x W

  CodeGrid grid(std::size_t n, std::size_t num_codes) const {
    CodeGrid g(height, width, num_codes);
    for (std::size_t i = 0; i < height * width; ++i) {
      g.indices[i] = static_cast<std::uint16_t>(indices[n * height * width + i]);
    }
    return g;
  }
};

// Nearest codebook vector per cell by squared Euclidean distance, lowest
// index on ties.
inline Quantized quantize(const Tensor<float>& z_e, const Codebook& cb) {
  require(z_e.rank() == 4, "quantize: z_e must be N x D x H x W");
  require(z_e.dim(1) == cb.dim, "quantize: vector length " + std::to_string(z_e.dim(1)) +
                                    " != codebook dimension " + std::to_string(cb.dim));
  if (!z_e.all_finite()) fail(ErrorKind::numeric, "quantize: non-finite encoder output");
  Quantized q;
  q.batch = z_e.dim(0);
  q.height = z_e.dim(2);
  q.width = z_e.dim(3);
  q.z_q = Tensor<float>(z_e.dims());
  q.indices.resize(q.batch * q.height * q.width);
  const std::size_t plane = q.height * q.width;
  parallel_for(q.batch, [&](std::size_t n) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < cb.num_embeddings; ++k) {
        double dist = 0.0;
        for (std::size_t d = 0; d < cb.dim; ++d) {
          const double diff = static_cast<double>(z_e[(n * cb.dim + d) * plane + p]) -
                              static_cast<double>(cb.vectors[k * cb.dim + d]);
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      q.indices[n * plane + p] = static_cast<std::int32_t>(best);
      for (std::size_t d = 0; d < cb.dim; ++d) {
        q.z_q[(n * cb.dim + d) * plane + p] = cb.vectors[best * cb.dim + d];
      }
    }
  });
  return q;
}

// Exponential-moving-average codebook update with Laplace-smoothed counts.
inline void ema_update(Codebook& cb, const Tensor<float>& z_e,
                       std::span<const std::int32_t> indices) {
  const std::size_t K = cb.num_embeddings, D = cb.dim;
  require(z_e.rank() == 4 && z_e.dim(1) == D, "ema_update: z_e must be N x D x H x W");
  const std::size_t plane = z_e.dim(2) * z_e.dim(3);
  require(indices.size() == z_e.dim(0) * plane, "ema_update: index count mismatch");
  std::vector<double> counts(K, 0.0);
  std::vector<double> sums(K * D, 0.0);
  for (std::size_t n = 0; n < z_e.dim(0); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const auto k = static_cast<std::size_t>(indices[n * plane + p]);
      require(k < K, "ema_update: index out of range");
      counts[k] += 1.0;
      for (std::size_t d = 0; d < D; ++d) sums[k * D + d] += z_e[(n * D + d) * plane + p];
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double size = cb.decay * cb.cluster_size[k] + (1.0 - cb.decay) * counts[k];
    cb.cluster_size[k] = static_cast<float>(size);
    total += size;
    for (std::size_t d = 0; d < D; ++d) {
      cb.vector_sums[k * D + d] = static_cast<float>(
          cb.decay * cb.vector_sums[k * D + d] + (1.0 - cb.decay) * sums[k * D + d]);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double smoothed = (cb.cluster_size[k] + cb.epsilon) /
                            (total + static_cast<double>(K) * cb.epsilon) * total;
    for (std::size_t d = 0; d < D; ++d) {
      cb.vectors[k * D + d] = static_cast<float>(cb.vector_sums[k * D + d] / smoothed);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

struct LossTerms {
  ad::Var reconstruction;
  ad::Var commitment;
  ad::Var total;
};

// reconstruction = mse(x, x_hat); commitment = beta * mse(z_e, sg(z_q)).
// The commitment term only reaches the encoder.
inline LossTerms vq_losses(ad::Graph<float>& g, ad::Var x, ad::Var x_hat, ad::Var z_e,
                           const Tensor<float>& z_q, double beta) {
  LossTerms t;
  t.reconstruction = ad::mse(g, x, x_hat);
  t.commitment = ad::scale(g, ad::mse(g, z_e, g.constant(z_q)), static_cast<float>(beta));
  t.total = ad::add(g, t.reconstruction, t.commitment);
  return t;
}

struct LossValues {
  double reconstruction = 0, commitment = 0, total = 0;
};

inline LossValues vq_losses(const Tensor<float>& x, const Tensor<float>& x_hat,
                            const Tensor<float>& z_e, const Tensor<float>& z_q, double beta) {
  ad::Graph<float> g;
  LossTerms t = vq_losses(g, g.constant(x), g.constant(x_hat), g.constant(z_e), z_q, beta);
  return {g.value(t.reconstruction)[0], g.value(t.commitment)[0], g.value(t.total)[0]};
}

// ---------------------------------------------------------------------------
// Model

class VqvaeModel {
 public:
  VqvaeModel() = default;

  explicit VqvaeModel(const VqvaeConfig& cfg) : config_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t h1 = cfg.hidden1, h2 = cfg.hidden2, D = cfg.embedding_dim;
    enc1_ = conv_params(h1, kChannels, 4, rng);
    enc2_ = conv_params(h2, h1, 4, rng);
    enc3_ = conv_params(D, h2, 1, rng);
    dec1_ = conv_params(h2, D, 1, rng);
    dec2_ = conv_params(h1, h2, 3, rng);
    dec3_ = conv_params(kChannels, h1, 3, rng);
    codebook_ = Codebook(cfg.num_embeddings, D, cfg.decay, cfg.epsilon, rng);
  }

  const VqvaeConfig& config() const noexcept { return config_; }
  const Codebook& codebook() const noexcept { return codebook_; }
  Codebook& codebook() noexcept { return codebook_; }

  std::vector<Parameter<float>*> parameters() {
    std::vector<Parameter<float>*> out;
    for (ConvParams* c : convs()) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
    return out;
  }

  // z_e for a normalized batch. `train` binds parameters for gradients.
  ad::Var encoder(ad::Graph<float>& g, ad::Var x, bool train) {
    ad::Var h = conv(g, x, enc1_, 2, 1, train);
    h = conv(g, ad::relu(g, h), enc2_, 2, 1, train);
    return conv(g, ad::relu(g, h), enc3_, 1, 0, train);
  }

  ad::Var decoder(ad::Graph<float>& g, ad::Var z_q, bool train) {
    ad::Var h = ad::relu(g, conv(g, z_q, dec1_, 1, 0, train));
    h = ad::relu(g, conv(g, ad::upsample_nearest(g, h, 2), dec2_, 1, 1, train));
    return conv(g, ad::upsample_nearest(g, h, 2), dec3_, 1, 1, train);
  }

  std::vector<CodeGrid> encode_to_codes(std::span<const DualImage> images) {
    std::vector<CodeGrid> out;
    for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
      auto chunk = images.subspan(start, std::min(kInferenceBatch, images.size() - start));
      for (const auto& im : chunk) check_input_dims(im);
      ad::Graph<float> g;
      ad::Var z_e = encoder(g, g.constant(normalize(chunk)), false);
      Quantized q = quantize(g.value(z_e), codebook_);
      for (std::size_t n = 0; n < chunk.size(); ++n) {
        out.push_back(q.grid(n, codebook_.num_embeddings));
      }
    }
    return out;
  }

  CodeGrid encode_to_codes(const DualImage& image) {
    return encode_to_codes(std::span<const DualImage>(&image, 1)).front();
  }

  std::vector<DualImage> decode_codes(std::span<const CodeGrid> grids) {
    std::vector<DualImage> out;
    for (std::size_t start = 0; start < grids.size(); start += kInferenceBatch) {
      auto chunk = grids.subspan(start, std::min(kInferenceBatch, grids.size() - start));
      ad::Graph<float> g;
      ad::Var x_hat = decoder(g, g.constant(lookup(chunk)), false);
      for (auto& d : denormalize(g.value(x_hat))) out.push_back(std::move(d));
    }
    return out;
  }

  DualImage decode_codes(const CodeGrid& grid) {
    return decode_codes(std::span<const CodeGrid>(&grid, 1)).front();
  }

  // Codebook lookup: N x D x h x w tensor of the selected vectors.
  Tensor<float> lookup(std::span<const CodeGrid> grids) const {
    require(!grids.empty(), "lookup: no grids");
    const std::size_t D = codebook_.dim, h = grids[0].height, w = grids[0].width;
    Tensor<float> z({grids.size(), D, h, w});
    for (std::size_t n = 0; n < grids.size(); ++n) {
      const CodeGrid& grid = grids[n];
      require(grid.height == h && grid.width == w, "decode: mixed grid sizes");
      for (std::size_t i = 0; i < h * w; ++i) {
        const std::size_t k = grid.indices[i];
        if (k >= codebook_.num_embeddings) {
          fail(ErrorKind::invalid_argument, "decode: code index " + std::to_string(k) +
                                                " >= K=" + std::to_string(codebook_.num_embeddings));
        }
        for (std::size_t d = 0; d < D; ++d) z[(n * D + d) * h * w + i] = codebook_.vectors[k * D + d];
      }
    }
    return z;
  }

  // Mean squared reconstruction error through the quantizer, in normalized
  // units, averaged over all pixels and channels of `images`.
  double reconstruction_error(std::span<const DualImage> images) {
    require(!images.empty(), "reconstruction_error: no images");
    double weighted = 0.0;
    for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
      auto chunk = images.subspan(start, std::min(kInferenceBatch, images.size() - start));
      ad::Graph<float> g;
      ad::Var x = g.constant(normalize(chunk));
      ad::Var z_e = encoder(g, x, false);
      Quantized q = quantize(g.value(z_e), codebook_);
      ad::Var x_hat = decoder(g, g.constant(q.z_q), false);
      weighted += static_cast<double>(g.value(ad::mse(g, x, x_hat))[0]) *
                  static_cast<double>(chunk.size());
    }
    return weighted / static_cast<double>(images.size());
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.header["format"] = "msf-vqvae";
    ck.header["version"] = 1;
    ck.header["K"] = config_.num_embeddings;
    ck.header["D"] = config_.embedding_dim;
    ck.header["beta"] = config_.commitment_cost;
    ck.header["decay"] = config_.decay;
    ck.header["epsilon"] = config_.epsilon;
    ck.header["channel_widths"] = {config_.hidden1, config_.hidden2, config_.embedding_dim};
    ck.header["normalization"] = {{"input_range", {0, 255}}, {"output_range", {-1.0, 1.0}},
                                  {"rounding", "half-up"}};
    const char* names[] = {"encoder.conv1", "encoder.conv2", "encoder.proj",
                           "decoder.proj", "decoder.conv1", "decoder.conv2"};
    auto cs = convs();
    for (std::size_t i = 0; i < cs.size(); ++i) {
      ck.tensors.emplace_back(std::string(names[i]) + ".weight", cs[i]->weight.value);
      ck.tensors.emplace_back(std::string(names[i]) + ".bias", cs[i]->bias.value);
    }
    ck.tensors.emplace_back("codebook.vectors", codebook_.vectors);
    ck.tensors.emplace_back("codebook.cluster_size", codebook_.cluster_size);
    ck.tensors.emplace_back("codebook.vector_sums", codebook_.vector_sums);
    return ck;
  }

  static VqvaeModel from_checkpoint(const Checkpoint& ck) {
    if (ck.header.value("format", std::string{}) != "msf-vqvae") {
      fail(ErrorKind::io, "not a VQ-VAE checkpoint");
    }
    VqvaeConfig cfg;
    cfg.num_embeddings = ck.header.at("K");
    cfg.embedding_dim = ck.header.at("D");
    cfg.commitment_cost = ck.header.at("beta");
    cfg.decay = ck.header.at("decay");
    cfg.epsilon = ck.header.at("epsilon");
    cfg.hidden1 = ck.header.at("channel_widths").at(0);
    cfg.hidden2 = ck.header.at("channel_widths").at(1);
    VqvaeModel m(cfg);
    const char* names[] = {"encoder.conv1", "encoder.conv2", "encoder.proj",
                           "decoder.proj", "decoder.conv1", "decoder.conv2"};
    auto cs = m.convs();
    for (std::size_t i = 0; i < cs.size(); ++i) {
      cs[i]->weight = Parameter<float>(
          ck.get(std::string(names[i]) + ".weight", cs[i]->weight.value.dims()));
      cs[i]->bias =
          Parameter<float>(ck.get(std::string(names[i]) + ".bias", cs[i]->bias.value.dims()));
    }
    const std::size_t K = cfg.num_embeddings, D = cfg.embedding_dim;
    m.codebook_.vectors = ck.get("codebook.vectors", {K, D});
    m.codebook_.cluster_size = ck.get("codebook.cluster_size", {K});
    m.codebook_.vector_sums = ck.get("codebook.vector_sums", {K, D});
    return m;
  }

  void save(const std::filesystem::path& stem, const Json& extra = Json::object()) const {
    Checkpoint ck = to_checkpoint();
    for (auto it = extra.begin(); it != extra.end(); ++it) ck.header[it.key()] = it.value();
    save_checkpoint(stem, ck);
  }

  static VqvaeModel load(const std::filesystem::path& stem) {
    return from_checkpoint(load_checkpoint(stem));
  }

 private:
  static constexpr std::size_t kInferenceBatch = 16;

  struct ConvParams {
    Parameter<float> weight;
    Parameter<float> bias;
  };

  static ConvParams conv_params(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
    const std::size_t fan_in = in * k * k;
    return ConvParams{fan_in_uniform<float>({out, in, k, k}, fan_in, rng),
                      fan_in_uniform<float>({out}, fan_in, rng)};
  }

  static ad::Var conv(ad::Graph<float>& g, ad::Var x, ConvParams& p, std::size_t stride,
                      std::size_t padding, bool train) {
    ad::Var w = train ? g.param(p.weight) : g.frozen(p.weight);
    ad::Var b = train ? g.param(p.bias) : g.frozen(p.bias);
    return ad::conv2d(g, x, w, b, ad::Conv2dOptions{stride, padding});
  }

  void check_input_dims(const DualImage& im) const {
    require(im.width % kDownsample == 0 && im.height % kDownsample == 0,
            "encode: image dims " + std::to_string(im.width) + "x" + std::to_string(im.height) +
                " are not divisible by " + std::to_string(kDownsample));
  }

  std::vector<ConvParams*> convs() { return {&enc1_, &enc2_, &enc3_, &dec1_, &dec2_, &dec3_}; }
  std::vector<const ConvParams*> convs() const {
    return {&enc1_, &enc2_, &enc3_, &dec1_, &dec2_, &dec3_};
  }

  VqvaeConfig config_;
  ConvParams enc1_, enc2_, enc3_, dec1_, dec2_, dec3_;
  Codebook codebook_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t step = 0;
  std::optional<double> reconstruction;  // training batch losses (absent at step 0)
  std::optional<double> commitment;
  std::optional<double> validation;  // set at checkpoint evaluations
};

struct TrainResult {
  VqvaeModel best;
  std::vector<TrainLogRow> log;
  double initial_validation_error = 0;
  double best_validation_error = 0;
  std::size_t best_step = 0;
};

inline void write_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os << "step,recon,commitment,validation_recon\n";
  auto field = [&](const std::optional<double>& v) {
    if (!v) return;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", *v);
    os << buf;
  };
  for (const auto& r : log) {
    os << r.step << ',';
    field(r.reconstruction);
    os << ',';
    field(r.commitment);
    os << ',';
    field(r.validation);
    os << '\n';
  }
}

// Runs `updates` Adam steps on shuffled batches. The validation set is
// scored before the first update, every checkpoint_interval updates and
// after the last one; the best-scoring model is kept (and written to
// `checkpoint_stem` when given). An empty validation set scores the
// training set instead.
inline TrainResult train_vqvae(std::span<const DualImage> train,
                               std::span<const DualImage> validation, const VqvaeConfig& cfg,
                               const std::optional<std::filesystem::path>& checkpoint_stem = {}) {
  cfg.validate();
  require(!train.empty(), "train_vqvae: training set is empty");
  for (const auto& im : train) {
    require(im.width == train[0].width && im.height == train[0].height,
            "train_vqvae: training images differ in size");
    require(im.width % kDownsample == 0 && im.height % kDownsample == 0,
            "train_vqvae: image dims must be divisible by 4");
  }
  std::span<const DualImage> scored = validation.empty() ? train : validation;

  VqvaeModel model(cfg);
  TrainResult result;
  auto evaluate = [&](std::size_t step) {
    const double err = model.reconstruction_error(scored);
    if (!std::isfinite(err)) {
      fail(ErrorKind::numeric, "train_vqvae: non-finite validation error at step " +
                                   std::to_string(step));
    }
    if (step == 0 || err < result.best_validation_error) {
      result.best_validation_error = err;
      result.best_step = step;
      result.best = model;
      if (checkpoint_stem) {
        model.save(*checkpoint_stem, Json{{"best_validation_error", err}, {"best_step", step}});
      }
    }
    return err;
  };
  result.initial_validation_error = evaluate(0);
  result.log.push_back(TrainLogRow{0, std::nullopt, std::nullopt, result.initial_validation_error});

  Rng rng(cfg.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;
  std::vector<DualImage> batch;
  auto params = model.parameters();

  for (std::size_t step = 1; step <= cfg.updates; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(train[order[cursor++]]);
    }
    ad::Graph<float> g;
    ad::Var x = g.constant(normalize(batch));
    ad::Var z_e = model.encoder(g, x, true);
    Quantized q = quantize(g.value(z_e), model.codebook());
    ad::Var z_q = ad::straight_through(g, z_e, q.z_q);
    ad::Var x_hat = model.decoder(g, z_q, true);
    LossTerms loss = vq_losses(g, x, x_hat, z_e, q.z_q, cfg.commitment_cost);
    const double recon = g.value(loss.reconstruction)[0];
    const double commit = g.value(loss.commitment)[0];
    if (!std::isfinite(recon) || !std::isfinite(commit)) {
      fail(ErrorKind::numeric, "train_vqvae: non-finite loss at step " + std::to_string(step));
    }
    g.backward(loss.total);
    adam_step<float>(params, cfg.learning_rate);
    if (cfg.ema) ema_update(model.codebook(), g.value(z_e), q.indices);

    TrainLogRow row{step, recon, commit, std::nullopt};
    if (step % cfg.checkpoint_interval == 0 || step == cfg.updates) row.validation = evaluate(step);
    result.log.push_back(row);
  }
  return result;
}

}  // namespace msf::vqvae
