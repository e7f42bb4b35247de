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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msf/common.hpp"

namespace msf {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major tensor of rank 1..4. Images use N x C x H x W.
template <typename T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T{}) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(shape_size(dims_), fill);
  }

  Tensor(Shape dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    require(data_.size() == shape_size(dims_),
            "tensor data length " + std::to_string(data_.size()) +
                " does not match dims " + shape_string(dims_));
  }

  static Tensor uniform(Shape dims, T lo, T hi, Rng& rng) {
    Tensor t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    if (dims_.empty() || dims_.size() > 4) {
      fail(ErrorKind::invalid_argument,
           "tensor rank must be 1..4, got " + std::to_string(dims_.size()));
    }
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i] == 0) {
        fail(ErrorKind::invalid_argument,
             "tensor axis " + std::to_string(i) + " has zero extent in " + shape_string(dims_));
      }
    }
  }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const {
    return ((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  Shape dims_;
  std::vector<T> data_;
};

// A trainable tensor with its gradient and Adam moments.
template <typename T = float>
struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor<T> v)
      : value(std::move(v)),
        grad(value.dims()),
        first_moment(value.dims()),
        second_moment(value.dims()) {}

  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> first_moment;
  Tensor<T> second_moment;
  std::uint64_t step = 0;

  void zero_grad() { grad.fill(T{}); }
};

// Fan-in scaled uniform init: U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T = float>
Parameter<T> fan_in_uniform(Shape dims, std::size_t fan_in, Rng& rng) {
  const T bound = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  return Parameter<T>(Tensor<T>::uniform(std::move(dims), -bound, bound, rng));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One Adam update with bias correction over every parameter, then clears
// gradients. A non-finite gradient anywhere rejects the whole step before
// any parameter is touched.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, double learning_rate,
               const AdamOptions& opt = {}) {
  require(learning_rate > 0, "adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->grad.all_finite()) {
      fail(ErrorKind::numeric,
           "adam_step: non-finite gradient in parameter " + std::to_string(i) +
               " " + shape_string(params[i]->value.dims()));
    }
  }
  for (Parameter<T>* p : params) {
    ++p->step;
    const double t = static_cast<double>(p->step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double m = opt.beta1 * p->first_moment[i] + (1.0 - opt.beta1) * g;
      const double v = opt.beta2 * p->second_moment[i] + (1.0 - opt.beta2) * g * g;
      p->first_moment[i] = static_cast<T>(m);
      p->second_moment[i] = static_cast<T>(v);
      const double update =
          learning_rate * (m / c1) / (std::sqrt(v / c2) + opt.epsilon);
      p->value[i] = static_cast<T>(p->value[i] - update);
    }
    p->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Portable checkpoint encoding:
//   "MSFT" | version u8 | rank u8 | dims u32 LE each | data f32 LE row-major

inline constexpr char kTensorMagic[4] = {'M', 'S', 'F', 'T'};
inline constexpr std::uint8_t kTensorFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    fail(ErrorKind::io, "truncated tensor record");
  }
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor<float>& t) {
  os.write(kTensorMagic, 4);
  os.put(static_cast<char>(kTensorFormatVersion));
  os.put(static_cast<char>(t.rank()));
  for (std::size_t d : t.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) fail(ErrorKind::io, "failed writing tensor record");
}

inline Tensor<float> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    fail(ErrorKind::io, "bad tensor magic (expected MSFT)");
  }
  const int version = is.get();
  if (version != kTensorFormatVersion) {
    fail(ErrorKind::io, "unsupported tensor format version " + std::to_string(version));
  }
  const int rank = is.get();
  if (rank < 1 || rank > 4) fail(ErrorKind::io, "bad tensor rank " + std::to_string(rank));
  Shape dims(static_cast<std::size_t>(rank));
  for (auto& d : dims) d = detail::get_u32(is);
  for (std::size_t d : dims) {
    if (d == 0) fail(ErrorKind::io, "tensor record with zero extent");
  }
  std::vector<float> data(shape_size(dims));
  for (auto& v : data) v = std::bit_cast<float>(detail::get_u32(is));
  return Tensor<float>(std::move(dims), std::move(data));
}

}  // namespace msf
