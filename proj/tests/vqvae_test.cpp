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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "msf/dataprep.hpp"
#include "msf/vqvae.hpp"
#include "oracles.hpp"

namespace {

using namespace msf;
using namespace msf::vqvae;

// Index of the nearest row of `vectors` to cell p of z_e, by exhaustive scan.
std::size_t nearest(const Tensor<float>& z_e, std::size_t n, std::size_t p,
                    const Tensor<float>& vectors) {
  const std::size_t D = vectors.dim(1), plane = z_e.dim(2) * z_e.dim(3);
  std::size_t best = 0;
  double best_d = 0;
  for (std::size_t k = 0; k < vectors.dim(0); ++k) {
    double d = 0;
    for (std::size_t j = 0; j < D; ++j) {
      const double diff = double(z_e[(n * D + j) * plane + p]) - double(vectors[k * D + j]);
      d += diff * diff;
    }
    if (k == 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

VqvaeConfig small_config() {
  VqvaeConfig c;
  c.hidden1 = 8;
  c.hidden2 = 8;
  c.embedding_dim = 4;
  c.num_embeddings = 6;
  c.batch_size = 4;
  c.updates = 20;
  c.checkpoint_interval = 5;
  c.seed = 3;
  return c;
}

std::vector<DualImage> toy_duals(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<DualImage> out;
  for (auto& s : dataprep::generate_toy_dual_images(n, size, 4, seed)) out.push_back(s.dual);
  return out;
}

TEST(Normalize, Endpoints) {
  EXPECT_EQ(normalize_value(0), -1.0f);
  EXPECT_EQ(normalize_value(255), 1.0f);
  EXPECT_NEAR(normalize_value(128), 2.0 * 128 / 255 - 1, 1e-7);
  EXPECT_NEAR(normalize_value(128), 0.00392, 1e-5);
}

TEST(Normalize, RoundTrip) {
  for (int v = 0; v < 256; ++v) {
    EXPECT_EQ(denormalize_value(normalize_value(static_cast<std::uint8_t>(v))), v);
  }
}

TEST(Quantize, ExactVector) {
  Rng rng(1);
  auto cb = Codebook::from_vectors(Tensor<float>::uniform({5, 3}, -1, 1, rng));
  Tensor<float> z({1, 3, 1, 2});
  for (std::size_t d = 0; d < 3; ++d) {
    z[d * 2] = cb.vectors[3 * 3 + d];
    z[d * 2 + 1] = 9.0f;
  }
  const auto q = quantize(z, cb);
  EXPECT_EQ(q.indices[0], 3);
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(q.z_q[d * 2], z[d * 2]);
}

TEST(Quantize, TieGoesToLowerIndex) {
  auto cb = Codebook::from_vectors(Tensor<float>({3, 1}, std::vector<float>{5, 1, -1}));
  Tensor<float> z({1, 1, 1, 1}, 0.0f);
  EXPECT_EQ(quantize(z, cb).indices[0], 1);
}

TEST(Quantize, MatchesExhaustiveScan) {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto cb = Codebook::from_vectors(Tensor<float>::uniform({10, 8}, -1, 1, rng));
    auto z = Tensor<float>::uniform({2, 8, 3, 4}, -1, 1, rng);
    const auto q = quantize(z, cb);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 12; ++p)
        ASSERT_EQ(static_cast<std::size_t>(q.indices[n * 12 + p]), nearest(z, n, p, cb.vectors));
  }
}

TEST(Quantize, NonFiniteInputRejected) {
  auto cb = Codebook::from_vectors(Tensor<float>({2, 1}));
  Tensor<float> z({1, 1, 1, 1}, std::nanf(""));
  try {
    quantize(z, cb);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Losses, PerfectReconstruction) {
  Rng rng(3);
  auto x = Tensor<float>::uniform({1, 4, 4, 4}, -1, 1, rng);
  auto z = Tensor<float>::uniform({1, 2, 1, 1}, -1, 1, rng);
  const auto l = vq_losses(x, x, z, z, 0.25);
  EXPECT_EQ(l.reconstruction, 0);
  EXPECT_EQ(l.commitment, 0);
  EXPECT_EQ(l.total, 0);
}

TEST(Losses, ZeroBeta) {
  Rng rng(4);
  auto x = Tensor<float>::uniform({1, 4, 2, 2}, -1, 1, rng);
  auto y = Tensor<float>::uniform({1, 4, 2, 2}, -1, 1, rng);
  auto z = Tensor<float>::uniform({1, 2, 1, 1}, -1, 1, rng);
  auto q = Tensor<float>::uniform({1, 2, 1, 1}, -1, 1, rng);
  const auto l = vq_losses(x, y, z, q, 0.0);
  EXPECT_EQ(l.total, l.reconstruction);
}

TEST(Losses, HandSummed) {
  Rng rng(5);
  auto x = Tensor<float>::uniform({2, 4, 2, 2}, -1, 1, rng);
  auto y = Tensor<float>::uniform({2, 4, 2, 2}, -1, 1, rng);
  auto z = Tensor<float>::uniform({2, 3, 1, 1}, -1, 1, rng);
  auto q = Tensor<float>::uniform({2, 3, 1, 1}, -1, 1, rng);
  double r = 0, c = 0;
  for (std::size_t i = 0; i < x.size(); ++i) r += (double(x[i]) - y[i]) * (double(x[i]) - y[i]);
  for (std::size_t i = 0; i < z.size(); ++i) c += (double(z[i]) - q[i]) * (double(z[i]) - q[i]);
  const double expected = r / double(x.size()) + 0.25 * c / double(z.size());
  EXPECT_NEAR(vq_losses(x, y, z, q, 0.25).total, expected, 1e-5);
}

TEST(Ema, UnassignedVectorStays) {
  Rng rng(6);
  auto cb = Codebook::from_vectors(Tensor<float>::uniform({3, 2}, -1, 1, rng));
  const auto before = cb.vectors;
  Tensor<float> z({1, 2, 1, 2}, 0.5f);
  std::vector<std::int32_t> idx{0, 0};
  ema_update(cb, z, idx);
  for (std::size_t k = 1; k < 3; ++k)
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(cb.vectors[k * 2 + d], before[k * 2 + d], 1e-4);
}

TEST(Ema, ZeroDecayReplaces) {
  auto cb = Codebook::from_vectors(Tensor<float>({2, 2}, std::vector<float>{0, 0, 1, 1}), 0.0);
  Tensor<float> z({1, 2, 2, 2});
  for (std::size_t p = 0; p < 4; ++p) {
    z[p] = 0.3f;
    z[4 + p] = -0.7f;
  }
  ema_update(cb, z, std::vector<std::int32_t>{1, 1, 1, 1});
  EXPECT_NEAR(cb.vectors[2], 0.3, 1e-4);
  EXPECT_NEAR(cb.vectors[3], -0.7, 1e-4);
}

TEST(Ema, TwoClusterStream) {
  Rng rng(7);
  auto cb = Codebook::from_vectors(Tensor<float>({2, 2}, std::vector<float>{0.1f, 0, -0.1f, 0}));
  const double means[2][2] = {{1.0, 0.5}, {-1.0, -0.5}};
  for (int step = 0; step < 500; ++step) {
    Tensor<float> z({1, 2, 4, 4});
    for (std::size_t p = 0; p < 16; ++p) {
      const std::size_t c = p % 2;
      for (std::size_t d = 0; d < 2; ++d) {
        z[d * 16 + p] = static_cast<float>(means[c][d] + rng.uniform(-0.1, 0.1));
      }
    }
    ema_update(cb, z, quantize(z, cb).indices);
  }
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_NEAR(cb.vectors[d], means[0][d], 1e-2);
    EXPECT_NEAR(cb.vectors[2 + d], means[1][d], 1e-2);
  }
}

TEST(StraightThrough, EncoderGradientEqualsDecoderInputGradient) {
  VqvaeModel model(small_config());
  const auto duals = toy_duals(2, 16, 1);
  ad::Graph<float> g;
  ad::Var x = g.constant(normalize(duals));
  ad::Var z_e = model.encoder(g, x, true);
  const auto q = quantize(g.value(z_e), model.codebook());
  ad::Var z_q = ad::straight_through(g, z_e, q.z_q);
  ad::Var recon = ad::mse(g, x, model.decoder(g, z_q, true));
  g.backward(recon);
  const auto a = g.grad(z_e), b = g.grad(z_q);
  ASSERT_EQ(a.dims(), b.dims());
  double norm = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::abs(a[i] - b[i]), 1e-6);
    norm += std::abs(b[i]);
  }
  EXPECT_GT(norm, 0);
}

TEST(Model, CodeGridShape) {
  VqvaeModel model(small_config());
  const auto toy = toy_duals(1, 32, 2);
  const auto g = model.encode_to_codes(toy[0]);
  EXPECT_EQ(g.height, 8u);
  EXPECT_EQ(g.width, 8u);
  EXPECT_EQ(g.num_codes, 6u);
  DualImage big(256, 256);
  const auto gb = model.encode_to_codes(big);
  EXPECT_EQ(gb.height, 64u);
  EXPECT_EQ(gb.width, 64u);
  EXPECT_EQ(model.decode_codes(g).width, 32u);
}

TEST(Model, CheckpointRoundTrip) {
  VqvaeModel model(small_config());
  const auto stem = std::filesystem::temp_directory_path() / "msf_vqvae_ck" / "model";
  model.save(stem);
  VqvaeModel back = VqvaeModel::load(stem);
  const auto toy = toy_duals(2, 16, 3);
  EXPECT_EQ(back.encode_to_codes(toy), model.encode_to_codes(toy));
  EXPECT_EQ(back.codebook().vectors, model.codebook().vectors);
}

TEST(Model, MissingCheckpoint) {
  try {
    VqvaeModel::load(std::filesystem::temp_directory_path() / "msf_no_such_dir" / "model");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_artifact);
  }
}

TEST(Train, ZeroUpdatesKeepsInitialization) {
  auto cfg = small_config();
  cfg.updates = 0;
  const auto toy = toy_duals(4, 16, 4);
  const auto r = train_vqvae(toy, {}, cfg);
  VqvaeModel init(cfg);
  EXPECT_EQ(r.best.to_checkpoint().tensors, init.to_checkpoint().tensors);
  EXPECT_EQ(r.log.size(), 1u);
}

TEST(Train, DeterministicLog) {
  const auto toy = toy_duals(6, 16, 5);
  const std::span<const DualImage> all(toy);
  const auto a = train_vqvae(all.first(4), all.subspan(4), small_config());
  const auto b = train_vqvae(all.first(4), all.subspan(4), small_config());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].reconstruction, b.log[i].reconstruction);
    EXPECT_EQ(a.log[i].validation, b.log[i].validation);
  }
  EXPECT_EQ(a.best.to_checkpoint().tensors, b.best.to_checkpoint().tensors);
}

TEST(Train, ReducesError) {
  auto cfg = small_config();
  cfg.updates = 150;
  cfg.checkpoint_interval = 50;
  cfg.learning_rate = 2e-3;
  const auto toy = toy_duals(12, 16, 6);
  const auto r = train_vqvae(std::span(toy).first(10), std::span(toy).subspan(10), cfg);
  EXPECT_LT(r.best_validation_error, r.initial_validation_error);
}

TEST(Config, Rejects) {
  VqvaeConfig c;
  c.num_embeddings = 0;
  EXPECT_THROW(c.validate(), Error);
  c = VqvaeConfig{};
  c.decay = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
