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

// Tape-based reverse-mode differentiation over a fixed set of tensor
// operations: conv2d (optionally weight-masked), relu, upsample_nearest,
// add, sub, scale, mse, softmax_cross_entropy and the straight-through
// estimator used by the vector quantizer.
//
// Nodes are appended in evaluation order, so walking the tape backwards is
// a valid topological order for the backward pass.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "msf/common.hpp"
#include "msf/tensor.hpp"

namespace msf::ad {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  // A value that never receives gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  // A free leaf that records its gradient (used by gradient checks).
  Var leaf(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  // A leaf bound to a parameter; backward() accumulates into p.grad.
  Var param(Parameter<T>& p) { return push(p.value, true, &p); }

  // Same value as `p`, without gradient tracking (inference).
  Var frozen(const Parameter<T>& p) { return push(p.value, false, nullptr); }

  const Tensor<T>& value(Var v) const { return node(v).value; }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  // Gradient of the last backward() target with respect to v; zeros if v
  // did not contribute.
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? n.grad : Tensor<T>(n.value.dims());
  }

  Var emit(Tensor<T> value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var out = push(std::move(value), needs, nullptr);
    if (needs) nodes_[out.id].backward = std::move(fn);
    return out;
  }

  // Adds `contribution` into the gradient of v, if v wants one.
  template <typename Fn>
  void accumulate(Var v, Fn&& contribution) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.dims());
      n.has_grad = true;
    }
    contribution(n.grad);
  }

  void backward(Var out) {
    require(value(out).size() == 1, "backward: target must be a scalar, got " +
                                        shape_string(value(out).dims()));
    backward(out, Tensor<T>(value(out).dims(), T{1}));
  }

  void backward(Var out, const Tensor<T>& seed) {
    require(seed.dims() == value(out).dims(),
            "backward: seed dims " + shape_string(seed.dims()) +
                " differ from output dims " + shape_string(value(out).dims()));
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    accumulate(out, [&](Tensor<T>& g) { g = seed; });
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      // Inputs always precede their consumer, so callbacks only touch
      // nodes with smaller ids and n.grad stays valid.
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var push(Tensor<T> value, bool needs, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(value), {}, false, needs, p, {}});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    require(v.id < nodes_.size(), "ad: variable does not belong to this graph");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.id < nodes_.size(), "ad: variable does not belong to this graph");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void check_same_dims(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    fail(ErrorKind::invalid_argument,
         std::string(op) + ": dims " + shape_string(a) + " vs " + shape_string(b));
  }
}

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t plane() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ow*stride + j - padding lies
// inside [0, extent).
inline void valid_range(std::size_t out, std::size_t stride, std::size_t offset,
                        std::size_t padding, std::size_t extent, std::size_t& lo,
                        std::size_t& hi) {
  lo = 0;
  while (lo < out && lo * stride + offset < padding) ++lo;
  hi = lo;
  while (hi < out && hi * stride + offset < padding + extent) ++hi;
}

// Writes the patches of sample n into columns [n*plane, (n+1)*plane) of a
// (C*kh*kw) x (N*plane) row-major matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t n, T* cols) {
  const std::size_t total_cols = g.batch * g.plane();
  const T* xs = x + n * g.in_ch * g.height * g.width;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.out_h, g.stride, i, g.padding, g.height, oh_lo, oh_hi);
      for (std::size_t j = 0; j < g.kw; ++j) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.out_w, g.stride, j, g.padding, g.width, ow_lo, ow_hi);
        T* row = cols + ((c * g.kh + i) * g.kw + j) * total_cols + n * g.plane();
        std::fill(row, row + oh_lo * g.out_w, T{});
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          T* dst = row + oh * g.out_w;
          const T* src = xs + (c * g.height + oh * g.stride + i - g.padding) * g.width;
          std::fill(dst, dst + ow_lo, T{});
          if (g.stride == 1) {
            std::copy(src + ow_lo + j - g.padding, src + ow_hi + j - g.padding, dst + ow_lo);
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
              dst[ow] = src[ow * g.stride + j - g.padding];
            }
          }
          std::fill(dst + ow_hi, dst + g.out_w, T{});
        }
        std::fill(row + oh_hi * g.out_w, row + g.plane(), T{});
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, std::size_t n, T* dx) {
  const std::size_t total_cols = g.batch * g.plane();
  T* xs = dx + n * g.in_ch * g.height * g.width;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.out_h, g.stride, i, g.padding, g.height, oh_lo, oh_hi);
      for (std::size_t j = 0; j < g.kw; ++j) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.out_w, g.stride, j, g.padding, g.width, ow_lo, ow_hi);
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * total_cols + n * g.plane();
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const T* src = row + oh * g.out_w;
          T* dst = xs + (c * g.height + oh * g.stride + i - g.padding) * g.width;
          if (g.stride == 1) {
            T* d = dst + j - g.padding;
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) d[ow] += src[ow];
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
              dst[ow * g.stride + j - g.padding] += src[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of x (N x C x H x W) with weights (O x C x kh x kw) plus
// a per-output-channel bias. With `mask`, the effective weights are
// weights * mask in both passes, so masked-out weights neither contribute to
// the output nor receive gradient.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, Conv2dOptions opt = {},
           const Tensor<T>* mask = nullptr) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  require(xv.rank() == 4, "conv2d: input must be N x C x H x W, got " +
                              shape_string(xv.dims()));
  require(wv.rank() == 4, "conv2d: weights must be O x C x kh x kw, got " +
                              shape_string(wv.dims()));
  require(opt.stride >= 1, "conv2d: stride must be positive");
  require(xv.dim(1) == wv.dim(1),
          "conv2d: channel axis mismatch, input has " + std::to_string(xv.dim(1)) +
              " channels but weights expect " + std::to_string(wv.dim(1)));
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(0),
          "conv2d: bias axis mismatch, expected " + std::to_string(wv.dim(0)) +
              " entries, got " + shape_string(bv.dims()));
  const std::size_t padded_h = xv.dim(2) + 2 * opt.padding;
  const std::size_t padded_w = xv.dim(3) + 2 * opt.padding;
  require(padded_h >= wv.dim(2), "conv2d: height axis smaller than kernel");
  require(padded_w >= wv.dim(3), "conv2d: width axis smaller than kernel");

  std::shared_ptr<const Tensor<T>> weight_mask;
  if (mask) {
    detail::check_same_dims(mask->dims(), wv.dims(), "conv2d mask");
    for (T m : mask->data()) {
      require(m == T{0} || m == T{1}, "conv2d: mask entries must be 0 or 1");
    }
    weight_mask = std::make_shared<const Tensor<T>>(*mask);
  }

  detail::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                           wv.dim(0), wv.dim(2), wv.dim(3), opt.stride, opt.padding,
                           (padded_h - wv.dim(2)) / opt.stride + 1,
                           (padded_w - wv.dim(3)) / opt.stride + 1};

  auto effective = std::make_shared<Tensor<T>>(wv);
  if (weight_mask) {
    for (std::size_t i = 0; i < effective->size(); ++i) (*effective)[i] *= (*weight_mask)[i];
  }

  const std::size_t total_cols = geo.batch * geo.plane();
  auto cols = std::make_shared<std::vector<T>>(geo.patch() * total_cols);
  parallel_for(geo.batch, [&](std::size_t n) { detail::im2col(xv.raw(), geo, n, cols->data()); });

  detail::RowMatrix<T> y_big(geo.out_ch, total_cols);
  y_big.noalias() =
      detail::ConstMatrixMap<T>(effective->raw(), geo.out_ch, geo.patch()) *
      detail::ConstMatrixMap<T>(cols->data(), geo.patch(), total_cols);

  Tensor<T> y({geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  for (std::size_t n = 0; n < geo.batch; ++n) {
    for (std::size_t o = 0; o < geo.out_ch; ++o) {
      T* dst = y.raw() + (n * geo.out_ch + o) * geo.plane();
      const T* src = y_big.data() + o * total_cols + n * geo.plane();
      for (std::size_t p = 0; p < geo.plane(); ++p) dst[p] = src[p] + bv[o];
    }
  }

  return g.emit(std::move(y), {x, w, b},
                [x, w, b, geo, cols, effective, weight_mask](Graph<T>& gr,
                                                             const Tensor<T>& dy) {
    const std::size_t total = geo.batch * geo.plane();
    detail::RowMatrix<T> dy_big(geo.out_ch, total);
    for (std::size_t n = 0; n < geo.batch; ++n) {
      for (std::size_t o = 0; o < geo.out_ch; ++o) {
        const T* src = dy.raw() + (n * geo.out_ch + o) * geo.plane();
        std::copy(src, src + geo.plane(), dy_big.data() + o * total + n * geo.plane());
      }
    }
    gr.accumulate(b, [&](Tensor<T>& db) {
      for (std::size_t o = 0; o < geo.out_ch; ++o) {
        T s{};
        for (std::size_t k = 0; k < total; ++k) s += dy_big(o, k);
        db[o] += s;
      }
    });
    gr.accumulate(w, [&](Tensor<T>& dw) {
      detail::RowMatrix<T> dw_eff =
          dy_big * detail::ConstMatrixMap<T>(cols->data(), geo.patch(), total).transpose();
      for (std::size_t i = 0; i < dw.size(); ++i) {
        const T m = weight_mask ? (*weight_mask)[i] : T{1};
        dw[i] += dw_eff.data()[i] * m;
      }
    });
    gr.accumulate(x, [&](Tensor<T>& dx) {
      detail::RowMatrix<T> dcols(geo.patch(), total);
      dcols.noalias() =
          detail::ConstMatrixMap<T>(effective->raw(), geo.out_ch, geo.patch()).transpose() *
          dy_big;
      parallel_for(geo.batch, [&](std::size_t n) {
        detail::col2im(dcols.data(), geo, n, dx.raw());
      });
    });
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return g.emit(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& xin = gr.value(x);
    gr.accumulate(x, [&](Tensor<T>& dx) {
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xin[i] > T{0}) dx[i] += dy[i];
      }
    });
  });
}

// Replicates each spatial cell into a factor x factor block.
template <typename T>
Var upsample_nearest(Graph<T>& g, Var x, std::size_t factor) {
  const Tensor<T>& xv = g.value(x);
  require(xv.rank() == 4, "upsample_nearest: input must be rank 4");
  require(factor >= 1, "upsample_nearest: factor must be positive");
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> y({N, C, H * factor, W * factor});
  const std::size_t Wf = W * factor;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.raw() + nc * H * W;
    T* dst = y.raw() + nc * H * factor * Wf;
    for (std::size_t h = 0; h < H; ++h) {
      T* first = dst + h * factor * Wf;
      for (std::size_t w = 0; w < W; ++w) {
        std::fill(first + w * factor, first + (w + 1) * factor, src[h * W + w]);
      }
      for (std::size_t r = 1; r < factor; ++r) std::copy(first, first + Wf, first + r * Wf);
    }
  }
  return g.emit(std::move(y), {x}, [x, factor](Graph<T>& gr, const Tensor<T>& dy) {
    gr.accumulate(x, [&](Tensor<T>& dx) {
      const std::size_t H = dx.dim(2), W = dx.dim(3), Wf = W * factor;
      for (std::size_t nc = 0; nc < dx.dim(0) * dx.dim(1); ++nc) {
        T* dst = dx.raw() + nc * H * W;
        const T* src = dy.raw() + nc * H * factor * Wf;
        for (std::size_t h = 0; h < H * factor; ++h) {
          const T* row = src + h * Wf;
          T* out = dst + (h / factor) * W;
          for (std::size_t w = 0; w < Wf; ++w) out[w / factor] += row[w];
        }
      }
    });
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  detail::check_same_dims(av.dims(), bv.dims(), "add");
  Tensor<T> y(av.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.emit(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& dy) {
    gr.accumulate(a, [&](Tensor<T>& da) { for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i]; });
    gr.accumulate(b, [&](Tensor<T>& db) { for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i]; });
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  detail::check_same_dims(av.dims(), bv.dims(), "sub");
  Tensor<T> y(av.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return g.emit(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& dy) {
    gr.accumulate(a, [&](Tensor<T>& da) { for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i]; });
    gr.accumulate(b, [&](Tensor<T>& db) { for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i]; });
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  const Tensor<T>& av = g.value(a);
  Tensor<T> y(av.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  return g.emit(std::move(y), {a}, [a, factor](Graph<T>& gr, const Tensor<T>& dy) {
    gr.accumulate(a, [&](Tensor<T>& da) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * factor;
    });
  });
}

// Mean of squared differences, as a 1-element tensor.
template <typename T>
Var mse(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  detail::check_same_dims(av.dims(), bv.dims(), "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    sum += d * d;
  }
  const double count = static_cast<double>(av.size());
  Tensor<T> y({1}, static_cast<T>(sum / count));
  return g.emit(std::move(y), {a, b}, [a, b, count](Graph<T>& gr, const Tensor<T>& dy) {
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    const T k = static_cast<T>(2.0 * static_cast<double>(dy[0]) / count);
    gr.accumulate(a, [&](Tensor<T>& da) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += k * (av[i] - bv[i]);
    });
    gr.accumulate(b, [&](Tensor<T>& db) {
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= k * (av[i] - bv[i]);
    });
  });
}

// Mean over all N*H*W positions of -log softmax(logits)[target], where
// logits are N x K x H x W and targets are laid out N x H x W row-major.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::vector<std::int32_t> targets) {
  const Tensor<T>& lv = g.value(logits);
  require(lv.rank() == 4, "softmax_cross_entropy: logits must be N x K x H x W");
  const std::size_t N = lv.dim(0), K = lv.dim(1), H = lv.dim(2), W = lv.dim(3);
  const std::size_t positions = N * H * W;
  require(targets.size() == positions,
          "softmax_cross_entropy: expected " + std::to_string(positions) +
              " targets, got " + std::to_string(targets.size()));
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= K) {
      fail(ErrorKind::invalid_argument, "softmax_cross_entropy: target " + std::to_string(t) +
                                            " out of range [0, " + std::to_string(K) + ")");
    }
  }
  const std::size_t plane = H * W;
  auto probs = std::make_shared<std::vector<T>>(lv.size());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const T* base = lv.raw() + n * K * plane + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(base[k * plane]));
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(base[k * plane]) - mx);
      const double log_z = mx + std::log(z);
      const std::int32_t t = targets[n * plane + p];
      loss += log_z - static_cast<double>(base[static_cast<std::size_t>(t) * plane]);
      for (std::size_t k = 0; k < K; ++k) {
        (*probs)[n * K * plane + k * plane + p] =
            static_cast<T>(std::exp(static_cast<double>(base[k * plane]) - log_z));
      }
    }
  }
  Tensor<T> y({1}, static_cast<T>(loss / static_cast<double>(positions)));
  return g.emit(std::move(y), {logits},
                [logits, probs, targets = std::move(targets), K, plane, positions](
                    Graph<T>& gr, const Tensor<T>& dy) {
    const T k_scale = static_cast<T>(static_cast<double>(dy[0]) / static_cast<double>(positions));
    gr.accumulate(logits, [&](Tensor<T>& dl) {
      const std::size_t N = dl.dim(0);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t t = static_cast<std::size_t>(targets[n * plane + p]);
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t idx = n * K * plane + k * plane + p;
            const T onehot = k == t ? T{1} : T{0};
            dl[idx] += k_scale * ((*probs)[idx] - onehot);
          }
        }
      }
    });
  });
}

// Forward value is `quantized`; backward hands the incoming gradient to
// `continuous` unchanged (straight-through estimator).
template <typename T>
Var straight_through(Graph<T>& g, Var continuous, Tensor<T> quantized) {
  detail::check_same_dims(g.value(continuous).dims(), quantized.dims(), "straight_through");
  return g.emit(std::move(quantized), {continuous},
                [continuous](Graph<T>& gr, const Tensor<T>& dy) {
    gr.accumulate(continuous, [&](Tensor<T>& dc) {
      for (std::size_t i = 0; i < dc.size(); ++i) dc[i] += dy[i];
    });
  });
}

}  // namespace msf::ad
