#pragma once

#include <vector>

#include "aft/conv.hpp"
#include "aft/tensor.hpp"

namespace aft {

/// 2x2 max pooling with stride 2. Requires even spatial dims. When `argmax`
/// is non-null it receives, per output element, the flat input index of the
/// selected maximum (first occurrence in row-major order on ties).
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, std::vector<std::int64_t>* argmax = nullptr) {
  const Dims d = x.dims();
  require(d.h % 2 == 0 && d.w % 2 == 0,
          "maxpool2d: spatial dims must be even, got ", d.str());
  const Dims od{d.n, d.c, d.h / 2, d.w / 2};
  Tensor<S> y(od);
  if (argmax) argmax->assign(od.numel(), 0);
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t oy = 0; oy < od.h; ++oy)
        for (std::int64_t ox = 0; ox < od.w; ++ox, ++o) {
          std::int64_t best = x.index(n, c, 2 * oy, 2 * ox);
          S bv = x[best];
          const std::int64_t cand[3] = {x.index(n, c, 2 * oy, 2 * ox + 1),
                                        x.index(n, c, 2 * oy + 1, 2 * ox),
                                        x.index(n, c, 2 * oy + 1, 2 * ox + 1)};
          for (std::int64_t idx : cand)
            if (x[idx] > bv) {
              bv = x[idx];
              best = idx;
            }
          y[o] = bv;
          if (argmax) (*argmax)[o] = best;
        }
  return y;
}

template <typename S>
Tensor<S> maxpool2d_backward(const Tensor<S>& dy,
                             const std::vector<std::int64_t>& argmax,
                             Dims x_dims) {
  require(static_cast<std::int64_t>(argmax.size()) == dy.size(),
          "maxpool2d backward: argmax size mismatch");
  Tensor<S> dx(x_dims);
  for (std::int64_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

/// Collapses each (h, w) plane to its mean, producing (n, c, 1, 1).
template <typename S>
Tensor<S> global_avgpool(const Tensor<S>& x) {
  const Dims d = x.dims();
  Tensor<S> y(Dims{d.n, d.c, 1, 1});
  const std::int64_t plane = d.h * d.w;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c) {
      const S* src = x.data() + (n * d.c + c) * plane;
      S acc = 0;
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      y.at(n, c, 0, 0) = acc / static_cast<S>(plane);
    }
  return y;
}

template <typename S>
Tensor<S> global_avgpool_backward(const Tensor<S>& dy, Dims x_dims) {
  Tensor<S> dx(x_dims);
  const std::int64_t plane = x_dims.h * x_dims.w;
  const S scale = S(1) / static_cast<S>(plane);
  for (std::int64_t n = 0; n < x_dims.n; ++n)
    for (std::int64_t c = 0; c < x_dims.c; ++c) {
      const S g = dy.at(n, c, 0, 0) * scale;
      S* dst = dx.data() + (n * x_dims.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
    }
  return dx;
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, std::int64_t scale = 2) {
  require(scale >= 1, "upsample_nearest: scale must be >= 1");
  const Dims d = x.dims();
  const Dims od{d.n, d.c, d.h * scale, d.w * scale};
  Tensor<S> y(od);
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t oy = 0; oy < od.h; ++oy) {
        const S* src = x.data() + ((n * d.c + c) * d.h + oy / scale) * d.w;
        S* dst = y.data() + ((n * d.c + c) * od.h + oy) * od.w;
        for (std::int64_t ox = 0; ox < od.w; ++ox) dst[ox] = src[ox / scale];
      }
  return y;
}

template <typename S>
Tensor<S> upsample_nearest_backward(const Tensor<S>& dy, std::int64_t scale,
                                    Dims x_dims) {
  Tensor<S> dx(x_dims);
  const Dims od = dy.dims();
  for (std::int64_t n = 0; n < od.n; ++n)
    for (std::int64_t c = 0; c < od.c; ++c)
      for (std::int64_t oy = 0; oy < od.h; ++oy) {
        const S* src = dy.data() + ((n * od.c + c) * od.h + oy) * od.w;
        S* dst = dx.data() + ((n * x_dims.c + c) * x_dims.h + oy / scale) * x_dims.w;
        for (std::int64_t ox = 0; ox < od.w; ++ox) dst[ox / scale] += src[ox];
      }
  return dx;
}

/// Multiplies x by a per-channel gate of shape (n, c, 1, 1).
template <typename S>
Tensor<S> mul_broadcast(const Tensor<S>& x, const Tensor<S>& gate) {
  const Dims d = x.dims();
  require(gate.dims() == Dims{d.n, d.c, 1, 1},
          "mul_broadcast: gate dims ", gate.dims().str(), " must be (", d.n,
          ",", d.c, ",1,1)");
  Tensor<S> y(d);
  const std::int64_t plane = d.h * d.w;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c) {
      const S g = gate.at(n, c, 0, 0);
      const S* src = x.data() + (n * d.c + c) * plane;
      S* dst = y.data() + (n * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * g;
    }
  return y;
}

}  // namespace aft
