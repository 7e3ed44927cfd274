#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aft/rng.hpp"

namespace aft {

namespace detail {

template <typename... Parts>
std::string msg(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  throw std::invalid_argument(detail::msg(parts...));
}

template <typename... Parts>
void require(bool ok, const Parts&... parts) {
  if (!ok) fail(parts...);
}

/// Shape of a rank-4 tensor in (batch, channels, height, width) order.
struct Dims {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Dims&) const = default;

  std::string str() const {
    return detail::msg("(", n, ",", c, ",", h, ",", w, ")");
  }
};

/// Dense NCHW tensor with row-major (n, c, h, w) element order.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Dims d) : dims_(d) {
    require(d.n >= 1 && d.c >= 1 && d.h >= 1 && d.w >= 1,
            "tensor dims must all be >= 1, got ", d.str());
    data_ = Storage::Zero(d.numel());
  }

  static Tensor zeros(Dims d) { return Tensor(d); }

  static Tensor full(Dims d, S v) {
    Tensor t(d);
    t.data_.setConstant(v);
    return t;
  }

  static Tensor from_values(Dims d, const std::vector<S>& values) {
    Tensor t(d);
    require(static_cast<std::int64_t>(values.size()) == d.numel(),
            "value count ", values.size(), " does not match dims ", d.str());
    for (std::int64_t i = 0; i < t.size(); ++i) t.data_[i] = values[i];
    return t;
  }

  static Tensor uniform(Dims d, CounterRng& rng, double lo, double hi) {
    Tensor t(d);
    for (std::int64_t i = 0; i < t.size(); ++i)
      t.data_[i] = static_cast<S>(rng.next_uniform(lo, hi));
    return t;
  }

  const Dims& dims() const { return dims_; }
  std::int64_t size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }

  S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[index(n, c, h, w)];
  }
  S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[index(n, c, h, w)];
  }

  S& operator[](std::int64_t i) { return data_[i]; }
  S operator[](std::int64_t i) const { return data_[i]; }

  void fill(S v) { data_.setConstant(v); }

  bool same_values(const Tensor& o) const {
    if (!(dims_ == o.dims_)) return false;
    for (std::int64_t i = 0; i < size(); ++i)
      if (data_[i] != o.data_[i]) return false;
    return true;
  }

 private:
  Dims dims_;
  Storage data_;
};

/// Inner product of two same-shaped tensors, accumulated in double.
template <typename S>
double dot(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.dims() == b.dims(), "dot: shape mismatch ", a.dims().str(), " vs ",
          b.dims().str());
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

/// Concatenates tensors along the channel axis. Batch and spatial dims must match.
template <typename S>
Tensor<S> concat_channels(const std::vector<const Tensor<S>*>& parts) {
  require(!parts.empty(), "concat_channels: empty input list");
  Dims d0 = parts[0]->dims();
  std::int64_t c_total = 0;
  for (const auto* p : parts) {
    const Dims& d = p->dims();
    require(d.n == d0.n && d.h == d0.h && d.w == d0.w,
            "concat_channels: incompatible dims ", d.str(), " vs ", d0.str());
    c_total += d.c;
  }
  Tensor<S> out(Dims{d0.n, c_total, d0.h, d0.w});
  const std::int64_t plane = d0.h * d0.w;
  for (std::int64_t n = 0; n < d0.n; ++n) {
    std::int64_t c_off = 0;
    for (const auto* p : parts) {
      const std::int64_t pc = p->dims().c;
      const S* src = p->data() + n * pc * plane;
      S* dst = out.data() + (n * c_total + c_off) * plane;
      std::copy(src, src + pc * plane, dst);
      c_off += pc;
    }
  }
  return out;
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  return concat_channels<S>({&a, &b});
}

/// Copies channels [c0, c1) into a new tensor.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, std::int64_t c0, std::int64_t c1) {
  const Dims& d = x.dims();
  require(0 <= c0 && c0 < c1 && c1 <= d.c, "slice_channels: bad range [", c0,
          ",", c1, ") for ", d.c, " channels");
  Tensor<S> out(Dims{d.n, c1 - c0, d.h, d.w});
  const std::int64_t plane = d.h * d.w;
  for (std::int64_t n = 0; n < d.n; ++n) {
    const S* src = x.data() + (n * d.c + c0) * plane;
    S* dst = out.data() + n * (c1 - c0) * plane;
    std::copy(src, src + (c1 - c0) * plane, dst);
  }
  return out;
}

}  // namespace aft
