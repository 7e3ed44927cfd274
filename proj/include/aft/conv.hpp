#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>

#include "aft/tensor.hpp"

namespace aft {

enum class Activation { Identity, Sigmoid, Silu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Silu: return "silu";
  }
  return "?";
}

/// Static description of a 2d convolution. Weights are laid out
/// (out_channels, in_channels, kh, kw); bias, when present, is (1, out, 1, 1).
struct ConvSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kh = 1;
  std::int64_t kw = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  bool has_bias = true;
  Activation activation = Activation::Identity;

  Dims weight_dims() const { return Dims{out_channels, in_channels, kh, kw}; }
  Dims bias_dims() const { return Dims{1, out_channels, 1, 1}; }
  std::int64_t fan_in() const { return in_channels * kh * kw; }

  std::int64_t out_extent(std::int64_t in, std::int64_t k) const {
    return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  }

  Dims out_dims(Dims in) const {
    return Dims{in.n, out_channels, out_extent(in.h, kh), out_extent(in.w, kw)};
  }

  void check(Dims in) const {
    require(in_channels >= 1 && out_channels >= 1 && kh >= 1 && kw >= 1 &&
                stride >= 1 && padding >= 0 && dilation >= 1,
            "conv spec has non-positive geometry");
    require(in.c == in_channels, "conv: input has ", in.c,
            " channels, spec expects ", in_channels);
    Dims od = out_dims(in);
    require(od.h >= 1 && od.w >= 1, "conv: input ", in.str(),
            " too small for kernel ", kh, "x", kw, " stride ", stride,
            " padding ", padding, " dilation ", dilation);
  }
};

/// Numerically stable logistic function. The result is clamped into the open
/// interval (0, 1) so downstream code may rely on strict bounds for any
/// finite input, including values that would round to 0 or 1.
template <typename S>
S sigmoid_scalar(S x) {
  S y;
  if (x >= S(0)) {
    S e = std::exp(-x);
    y = S(1) / (S(1) + e);
  } else {
    S e = std::exp(x);
    y = e / (S(1) + e);
  }
  const S lo = std::numeric_limits<S>::min();
  const S hi = S(1) - std::numeric_limits<S>::epsilon() / S(2);
  if (y < lo) y = lo;
  if (y > hi) y = hi;
  return y;
}

template <typename S>
S silu_scalar(S x) {
  return x * sigmoid_scalar(x);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> y(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  Tensor<S> y(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = silu_scalar(x[i]);
  return y;
}

template <typename S>
void apply_activation(Tensor<S>& t, Activation a) {
  switch (a) {
    case Activation::Identity:
      return;
    case Activation::Sigmoid:
      for (std::int64_t i = 0; i < t.size(); ++i)
        t[i] = sigmoid_scalar(t[i]);
      return;
    case Activation::Silu:
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = silu_scalar(t[i]);
      return;
  }
}

namespace detail {

template <typename S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Gathers convolution taps of one image into a (C*kh*kw) x (ho*wo) matrix.
/// Out-of-bounds taps (from padding) are zero-filled.
template <typename S>
void im2col(const S* img, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t kh, std::int64_t kw, std::int64_t stride,
            std::int64_t padding, std::int64_t dilation, std::int64_t ho,
            std::int64_t wo, S* cols) {
  const std::int64_t grid = ho * wo;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t p = 0; p < kh; ++p) {
      for (std::int64_t q = 0; q < kw; ++q) {
        S* row = cols + ((c * kh + p) * kw + q) * grid;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - padding + p * dilation;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, S(0));
            continue;
          }
          const S* src = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - padding + q * dilation;
            row[oy * wo + ox] = (ix < 0 || ix >= W) ? S(0) : src[ix];
          }
        }
      }
    }
  }
}

/// Scatter-add adjoint of im2col: accumulates a tap matrix back into an image.
template <typename S>
void col2im_add(const S* cols, std::int64_t C, std::int64_t H, std::int64_t W,
                std::int64_t kh, std::int64_t kw, std::int64_t stride,
                std::int64_t padding, std::int64_t dilation, std::int64_t ho,
                std::int64_t wo, S* img) {
  const std::int64_t grid = ho * wo;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t p = 0; p < kh; ++p) {
      for (std::int64_t q = 0; q < kw; ++q) {
        const S* row = cols + ((c * kh + p) * kw + q) * grid;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - padding + p * dilation;
          if (iy < 0 || iy >= H) continue;
          S* dst = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - padding + q * dilation;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvSpec& sp) {
  return sp.kh == 1 && sp.kw == 1 && sp.stride == 1 && sp.padding == 0;
}

template <typename S>
void check_weights(const ConvSpec& sp, const Tensor<S>& w, const Tensor<S>* b) {
  require(w.dims() == sp.weight_dims(), "conv: weight dims ", w.dims().str(),
          " do not match spec ", sp.weight_dims().str());
  if (sp.has_bias) {
    require(b != nullptr && b->dims() == sp.bias_dims(),
            "conv: bias must have dims ", sp.bias_dims().str());
  } else {
    require(b == nullptr || b->empty(), "conv: spec has no bias term");
  }
}

}  // namespace detail

/// Linear part of conv2d (cross-correlation plus bias, no activation).
template <typename S>
Tensor<S> conv2d_linear(const Tensor<S>& x, const ConvSpec& sp,
                        const Tensor<S>& w, const Tensor<S>* b = nullptr) {
  sp.check(x.dims());
  detail::check_weights(sp, w, b);
  const Dims in = x.dims();
  const Dims od = sp.out_dims(in);
  Tensor<S> y(od);

  const std::int64_t k = sp.in_channels * sp.kh * sp.kw;
  const std::int64_t grid = od.h * od.w;
  detail::ConstMatMap<S> w_mat(w.data(), sp.out_channels, k);

  Tensor<S> cols;
  const bool pointwise = detail::is_pointwise(sp);
  if (!pointwise) cols = Tensor<S>(Dims{1, 1, k, grid});

  for (std::int64_t n = 0; n < in.n; ++n) {
    const S* img = x.data() + n * in.c * in.h * in.w;
    const S* col_ptr = img;
    if (!pointwise) {
      detail::im2col(img, in.c, in.h, in.w, sp.kh, sp.kw, sp.stride, sp.padding,
                     sp.dilation, od.h, od.w, cols.data());
      col_ptr = cols.data();
    }
    detail::ConstMatMap<S> col_mat(col_ptr, k, grid);
    detail::MatMap<S> y_mat(y.data() + n * od.c * grid, od.c, grid);
    y_mat.noalias() = w_mat * col_mat;
    if (sp.has_bias) {
      for (std::int64_t c = 0; c < od.c; ++c)
        y_mat.row(c).array() += b->at(0, c, 0, 0);
    }
  }
  return y;
}

/// 2d convolution with the conv spec's activation applied last.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const ConvSpec& sp, const Tensor<S>& w,
                 const Tensor<S>* b = nullptr) {
  Tensor<S> y = conv2d_linear(x, sp, w, b);
  apply_activation(y, sp.activation);
  return y;
}

/// Gradient of conv2d_linear with respect to its input.
template <typename S>
Tensor<S> conv2d_backward_input(const Tensor<S>& dy, const ConvSpec& sp,
                                const Tensor<S>& w, Dims x_dims) {
  const Dims od = sp.out_dims(x_dims);
  require(dy.dims() == od, "conv backward: dy dims ", dy.dims().str(),
          " do not match forward output ", od.str());
  Tensor<S> dx(x_dims);
  const std::int64_t k = sp.in_channels * sp.kh * sp.kw;
  const std::int64_t grid = od.h * od.w;
  detail::ConstMatMap<S> w_mat(w.data(), sp.out_channels, k);

  if (detail::is_pointwise(sp)) {
    for (std::int64_t n = 0; n < x_dims.n; ++n) {
      detail::ConstMatMap<S> dy_mat(dy.data() + n * od.c * grid, od.c, grid);
      detail::MatMap<S> dx_mat(dx.data() + n * x_dims.c * grid, x_dims.c, grid);
      dx_mat.noalias() = w_mat.transpose() * dy_mat;
    }
    return dx;
  }

  Tensor<S> cols(Dims{1, 1, k, grid});
  for (std::int64_t n = 0; n < x_dims.n; ++n) {
    detail::ConstMatMap<S> dy_mat(dy.data() + n * od.c * grid, od.c, grid);
    detail::MatMap<S> col_mat(cols.data(), k, grid);
    col_mat.noalias() = w_mat.transpose() * dy_mat;
    detail::col2im_add(cols.data(), x_dims.c, x_dims.h, x_dims.w, sp.kh, sp.kw,
                       sp.stride, sp.padding, sp.dilation, od.h, od.w,
                       dx.data() + n * x_dims.c * x_dims.h * x_dims.w);
  }
  return dx;
}

/// Gradient of conv2d_linear with respect to the weights.
template <typename S>
Tensor<S> conv2d_backward_weights(const Tensor<S>& dy, const ConvSpec& sp,
                                  const Tensor<S>& x) {
  const Dims in = x.dims();
  const Dims od = sp.out_dims(in);
  require(dy.dims() == od, "conv backward: dy dims ", dy.dims().str(),
          " do not match forward output ", od.str());
  Tensor<S> dw(sp.weight_dims());
  const std::int64_t k = sp.in_channels * sp.kh * sp.kw;
  const std::int64_t grid = od.h * od.w;
  detail::MatMap<S> dw_mat(dw.data(), sp.out_channels, k);

  Tensor<S> cols;
  const bool pointwise = detail::is_pointwise(sp);
  if (!pointwise) cols = Tensor<S>(Dims{1, 1, k, grid});

  for (std::int64_t n = 0; n < in.n; ++n) {
    const S* img = x.data() + n * in.c * in.h * in.w;
    const S* col_ptr = img;
    if (!pointwise) {
      detail::im2col(img, in.c, in.h, in.w, sp.kh, sp.kw, sp.stride, sp.padding,
                     sp.dilation, od.h, od.w, cols.data());
      col_ptr = cols.data();
    }
    detail::ConstMatMap<S> col_mat(col_ptr, k, grid);
    detail::ConstMatMap<S> dy_mat(dy.data() + n * od.c * grid, od.c, grid);
    dw_mat.noalias() += dy_mat * col_mat.transpose();
  }
  return dw;
}

/// Gradient of a broadcast bias add: per-channel sum of dy.
template <typename S>
Tensor<S> bias_backward(const Tensor<S>& dy) {
  const Dims d = dy.dims();
  Tensor<S> db(Dims{1, d.c, 1, 1});
  const std::int64_t plane = d.h * d.w;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c) {
      const S* src = dy.data() + (n * d.c + c) * plane;
      S acc = 0;
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      db.at(0, c, 0, 0) += acc;
    }
  return db;
}

/// Transposed convolution (stride-s upsampling). Weights are laid out
/// (in_channels, out_channels, k, k); output spatial extent is (in-1)*s + k.
/// No activation is applied.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>* b, std::int64_t stride,
                           std::int64_t kernel) {
  const Dims in = x.dims();
  require(stride >= 1 && kernel >= 1, "conv_transpose: bad stride/kernel");
  require(w.dims().n == in.c, "conv_transpose: weight dims ", w.dims().str(),
          " expect first axis == input channels ", in.c);
  require(w.dims().h == kernel && w.dims().w == kernel,
          "conv_transpose: weight dims ", w.dims().str(),
          " do not match kernel ", kernel);
  const std::int64_t co = w.dims().c;
  const Dims od{in.n, co, (in.h - 1) * stride + kernel,
                (in.w - 1) * stride + kernel};
  if (b != nullptr && !b->empty())
    require(b->dims() == Dims{1, co, 1, 1}, "conv_transpose: bias must be (1,",
            co, ",1,1)");

  Tensor<S> y(od);
  const std::int64_t k = co * kernel * kernel;
  const std::int64_t grid = in.h * in.w;
  detail::ConstMatMap<S> w_mat(w.data(), in.c, k);
  Tensor<S> cols(Dims{1, 1, k, grid});

  for (std::int64_t n = 0; n < in.n; ++n) {
    detail::ConstMatMap<S> x_mat(x.data() + n * in.c * grid, in.c, grid);
    detail::MatMap<S> col_mat(cols.data(), k, grid);
    col_mat.noalias() = w_mat.transpose() * x_mat;
    S* img = y.data() + n * co * od.h * od.w;
    detail::col2im_add(cols.data(), co, od.h, od.w, kernel, kernel, stride,
                       /*padding=*/0, /*dilation=*/1, in.h, in.w, img);
    if (b != nullptr && !b->empty()) {
      const std::int64_t plane = od.h * od.w;
      for (std::int64_t c = 0; c < co; ++c) {
        S* dst = img + c * plane;
        const S bv = b->at(0, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += bv;
      }
    }
  }
  return y;
}

/// Gradient of conv_transpose2d with respect to its input.
template <typename S>
Tensor<S> conv_transpose2d_backward_input(const Tensor<S>& dy,
                                          const Tensor<S>& w,
                                          std::int64_t stride,
                                          std::int64_t kernel, Dims x_dims) {
  const std::int64_t co = w.dims().c;
  const Dims od{x_dims.n, co, (x_dims.h - 1) * stride + kernel,
                (x_dims.w - 1) * stride + kernel};
  require(dy.dims() == od, "conv_transpose backward: dy dims ",
          dy.dims().str(), " do not match forward output ", od.str());
  Tensor<S> dx(x_dims);
  const std::int64_t k = co * kernel * kernel;
  const std::int64_t grid = x_dims.h * x_dims.w;
  detail::ConstMatMap<S> w_mat(w.data(), x_dims.c, k);
  Tensor<S> cols(Dims{1, 1, k, grid});

  for (std::int64_t n = 0; n < x_dims.n; ++n) {
    detail::im2col(dy.data() + n * co * od.h * od.w, co, od.h, od.w, kernel,
                   kernel, stride, /*padding=*/0, /*dilation=*/1, x_dims.h,
                   x_dims.w, cols.data());
    detail::ConstMatMap<S> col_mat(cols.data(), k, grid);
    detail::MatMap<S> dx_mat(dx.data() + n * x_dims.c * grid, x_dims.c, grid);
    dx_mat.noalias() = w_mat * col_mat;
  }
  return dx;
}

/// Gradient of conv_transpose2d with respect to the weights.
template <typename S>
Tensor<S> conv_transpose2d_backward_weights(const Tensor<S>& dy,
                                            const Tensor<S>& x,
                                            std::int64_t stride,
                                            std::int64_t kernel,
                                            std::int64_t out_channels) {
  const Dims in = x.dims();
  const Dims od{in.n, out_channels, (in.h - 1) * stride + kernel,
                (in.w - 1) * stride + kernel};
  require(dy.dims() == od, "conv_transpose backward: dy dims ",
          dy.dims().str(), " do not match forward output ", od.str());
  Tensor<S> dw(Dims{in.c, out_channels, kernel, kernel});
  const std::int64_t k = out_channels * kernel * kernel;
  const std::int64_t grid = in.h * in.w;
  detail::MatMap<S> dw_mat(dw.data(), in.c, k);
  Tensor<S> cols(Dims{1, 1, k, grid});

  for (std::int64_t n = 0; n < in.n; ++n) {
    detail::im2col(dy.data() + n * od.c * od.h * od.w, od.c, od.h, od.w,
                   kernel, kernel, stride, /*padding=*/0, /*dilation=*/1, in.h,
                   in.w, cols.data());
    detail::ConstMatMap<S> col_mat(cols.data(), k, grid);
    detail::ConstMatMap<S> x_mat(x.data() + n * in.c * grid, in.c, grid);
    dw_mat.noalias() += x_mat * col_mat.transpose();
  }
  return dw;
}

}  // namespace aft
