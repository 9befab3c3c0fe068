// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Spatial operators on NCHW tensors. Convolutions lower to im2col + GEMM.

#pragma once

#include <string>
#include <vector>

#include "ngsc/ops.hpp"

namespace ngsc {

namespace detail {

struct ConvGeom {
  int64_t channels, in_h, in_w, out_h, out_w;
  int kh, kw, stride, pad;
};

// col[(c*kh + ky)*kw + kx][oy*out_w + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t plane = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.in_h + iy) * g.in_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= g.in_w) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const int64_t plane = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          T* dst = x + (c * g.in_h + iy) * g.in_w;
          const T* src = row + oy * g.out_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
}

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects a rank-4 NCHW tensor, got " + shape_str(s));
}

template <class T>
void add_channel_bias(std::span<T> out, std::span<const T> bias, int64_t n, int64_t c, int64_t plane) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (b * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] += bias[ch];
    }
}

template <class T>
void accumulate_channel_bias_grad(std::vector<T>& bgrad, const std::vector<T>& ygrad, int64_t n, int64_t c,
                                  int64_t plane) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* p = ygrad.data() + (b * c + ch) * plane;
      T acc = 0;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      bgrad[ch] += acc;
    }
}

}  // namespace detail

/// 2-D cross-correlation. weight: [Cout, Cin/groups, kh, kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::type_identity_t<const Tensor<T>*> bias = nullptr, int stride = 1,
                 int padding = 0, int groups = 1) {
  detail::require_rank4(input.shape(), "conv2d input");
  detail::require_rank4(weight.shape(), "conv2d weight");
  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = weight.dim(0);
  const int kh = static_cast<int>(weight.dim(2)), kw = static_cast<int>(weight.dim(3));
  if (groups <= 0 || cin % groups != 0 || cout % groups != 0)
    throw ShapeError("conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                     " not divisible by groups " + std::to_string(groups));
  if (weight.dim(1) != cin / groups)
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " inconsistent with input channels " +
                     std::to_string(cin) + " and groups " + std::to_string(groups));
  if (stride <= 0 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (h + 2 * padding < kh || w + 2 * padding < kw) throw ShapeError("conv2d: kernel larger than padded input");
  if (bias && bias->numel() != cout) throw ShapeError("conv2d: bias extent mismatch");
  const int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const int64_t wo = (w + 2 * padding - kw) / stride + 1;
  const int64_t cig = cin / groups, cog = cout / groups;
  const detail::ConvGeom geom{cig, h, w, ho, wo, kh, kw, stride, padding};
  const int64_t krows = cig * kh * kw, plane = ho * wo;

  Tensor<T> out(Shape{n, cout, ho, wo});
  std::vector<T> col(static_cast<size_t>(krows * plane));
  for (int64_t b = 0; b < n; ++b)
    for (int g = 0; g < groups; ++g) {
      detail::im2col(input.data().data() + (b * cin + g * cig) * h * w, geom, col.data());
      ConstMatMap<T> Wg(weight.data().data() + g * cog * krows, cog, krows);
      MatMap<T>(out.data().data() + (b * cout + g * cog) * plane, cog, plane).noalias() =
          Wg * ConstMatMap<T>(col.data(), krows, plane);
    }
  if (bias) detail::add_channel_bias<T>(out.data(), bias->data(), n, cout, plane);

  auto xn = input.node();
  auto wn = weight.node();
  detail::NodePtr<T> bn = bias ? bias->node() : nullptr;
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "conv2d", {&input, &weight, bias},
                        [=]() {
                          auto y = yw.lock();
                          std::vector<T> col(static_cast<size_t>(krows * plane));
                          std::vector<T> dcol(static_cast<size_t>(krows * plane));
                          if (xn->requires_grad) xn->ensure_grad();
                          if (wn->requires_grad) wn->ensure_grad();
                          for (int64_t b = 0; b < n; ++b)
                            for (int g = 0; g < groups; ++g) {
                              ConstMatMap<T> G(y->grad.data() + (b * cout + g * cog) * plane, cog, plane);
                              if (wn->requires_grad) {
                                detail::im2col(xn->data.data() + (b * cin + g * cig) * h * w, geom, col.data());
                                MatMap<T>(wn->grad.data() + g * cog * krows, cog, krows).noalias() +=
                                    G * ConstMatMap<T>(col.data(), krows, plane).transpose();
                              }
                              if (xn->requires_grad) {
                                MatMap<T>(dcol.data(), krows, plane).noalias() =
                                    ConstMatMap<T>(wn->data.data() + g * cog * krows, cog, krows).transpose() * G;
                                detail::col2im_add(dcol.data(), geom, xn->grad.data() + (b * cin + g * cig) * h * w);
                              }
                            }
                          if (bn && bn->requires_grad) {
                            bn->ensure_grad();
                            detail::accumulate_channel_bias_grad(bn->grad, y->grad, n, cout, plane);
                          }
                        });
}

/// Transposed convolution (adjoint of conv2d). weight: [Cin, Cout/groups, kh, kw].
/// Output extent: (in - 1) * stride - 2 * padding + k.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, std::type_identity_t<const Tensor<T>*> bias = nullptr,
                           int stride = 1, int padding = 0, int groups = 1) {
  detail::require_rank4(input.shape(), "conv_transpose2d input");
  detail::require_rank4(weight.shape(), "conv_transpose2d weight");
  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int kh = static_cast<int>(weight.dim(2)), kw = static_cast<int>(weight.dim(3));
  if (groups <= 0 || cin % groups != 0) throw ShapeError("conv_transpose2d: channels not divisible by groups");
  if (weight.dim(0) != cin) throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) +
                                             " inconsistent with input channels " + std::to_string(cin));
  const int64_t cog = weight.dim(1), cout = cog * groups, cig = cin / groups;
  const int64_t ho = (h - 1) * stride - 2 * padding + kh;
  const int64_t wo = (w - 1) * stride - 2 * padding + kw;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv_transpose2d: empty output");
  if (bias && bias->numel() != cout) throw ShapeError("conv_transpose2d: bias extent mismatch");
  // Geometry of the adjoint convolution, mapping the output map back onto the input grid.
  const detail::ConvGeom geom{cog, ho, wo, h, w, kh, kw, stride, padding};
  const int64_t krows = cog * kh * kw, plane = h * w, oplane = ho * wo;

  Tensor<T> out(Shape{n, cout, ho, wo});
  std::vector<T> col(static_cast<size_t>(krows * plane));
  for (int64_t b = 0; b < n; ++b)
    for (int g = 0; g < groups; ++g) {
      ConstMatMap<T> Wg(weight.data().data() + g * cig * krows, cig, krows);
      MatMap<T>(col.data(), krows, plane).noalias() =
          Wg.transpose() * ConstMatMap<T>(input.data().data() + (b * cin + g * cig) * plane, cig, plane);
      detail::col2im_add(col.data(), geom, out.data().data() + (b * cout + g * cog) * oplane);
    }
  if (bias) detail::add_channel_bias<T>(out.data(), bias->data(), n, cout, oplane);

  auto xn = input.node();
  auto wn = weight.node();
  detail::NodePtr<T> bn = bias ? bias->node() : nullptr;
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "conv_transpose2d", {&input, &weight, bias}, [=]() {
    auto y = yw.lock();
    std::vector<T> dcol(static_cast<size_t>(krows * plane));
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    for (int64_t b = 0; b < n; ++b)
      for (int g = 0; g < groups; ++g) {
        detail::im2col(y->grad.data() + (b * cout + g * cog) * oplane, geom, dcol.data());
        ConstMatMap<T> D(dcol.data(), krows, plane);
        if (xn->requires_grad)
          MatMap<T>(xn->grad.data() + (b * cin + g * cig) * plane, cig, plane).noalias() +=
              ConstMatMap<T>(wn->data.data() + g * cig * krows, cig, krows) * D;
        if (wn->requires_grad)
          MatMap<T>(wn->grad.data() + g * cig * krows, cig, krows).noalias() +=
              ConstMatMap<T>(xn->data.data() + (b * cin + g * cig) * plane, cig, plane) * D.transpose();
      }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      detail::accumulate_channel_bias_grad(bn->grad, y->grad, n, cout, oplane);
    }
  });
}

/// Non-overlapping k x k mean pooling.
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int k) {
  detail::require_rank4(x.shape(), "avg_pool2d");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k <= 0 || h % k != 0 || w % k != 0)
    throw ShapeError("avg_pool2d: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by " + std::to_string(k));
  const int64_t ho = h / k, wo = w / k;
  Tensor<T> out(Shape{n, c, ho, wo});
  const T scale = T(1) / static_cast<T>(k * k);
  auto xs = x.data();
  auto ys = out.data();
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) ys[(p * ho + y / k) * wo + xx / k] += xs[(p * h + y) * w + xx];
  const T area = static_cast<T>(k * k);
  for (auto& v : ys) v /= area;
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "avg_pool2d", {&x}, [=]() {
    auto yo = yw.lock();
    xn->ensure_grad();
    for (int64_t p = 0; p < n * c; ++p)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx)
          xn->grad[(p * h + y) * w + xx] += scale * yo->grad[(p * ho + y / k) * wo + xx / k];
  });
}

/// Zero padding of the two spatial axes.
template <class T>
Tensor<T> pad2d(const Tensor<T>& x, int top, int bottom, int left, int right) {
  detail::require_rank4(x.shape(), "pad2d");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h + top + bottom, wo = w + left + right;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * ho * wo), -1);
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) (*idx)[(p * ho + y + top) * wo + xx + left] = (p * h + y) * w + xx;
  return gather(x, Shape{n, c, ho, wo}, idx, "pad2d");
}

/// Wrap-around padding of `amount` rows/columns on the bottom and right.
template <class T>
Tensor<T> circular_pad_br(const Tensor<T>& x, int amount) {
  detail::require_rank4(x.shape(), "circular_pad_br");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h + amount, wo = w + amount;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * ho * wo));
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t xx = 0; xx < wo; ++xx) (*idx)[(p * ho + y) * wo + xx] = (p * h + y % h) * w + xx % w;
  return gather(x, Shape{n, c, ho, wo}, idx, "circular_pad_br");
}

/// Reverses both spatial axes (180-degree point reflection).
template <class T>
Tensor<T> flip_hw(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "flip_hw");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(x.numel()));
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) (*idx)[(p * h + y) * w + xx] = (p * h + (h - 1 - y)) * w + (w - 1 - xx);
  return gather(x, x.shape(), idx, "flip_hw");
}

/// Spatial crop [top, top+h) x [left, left+w).
template <class T>
Tensor<T> crop2d(const Tensor<T>& x, int64_t top, int64_t left, int64_t h, int64_t w) {
  detail::require_rank4(x.shape(), "crop2d");
  if (top == 0 && left == 0 && h == x.dim(2) && w == x.dim(3)) return x;
  return slice(slice(x, 2, top, h), 3, left, w);
}

/// Mirror padding on the bottom/right (not differentiable; used on inputs).
/// Indices reflect repeatedly, so any padding amount is accepted.
template <class T>
Tensor<T> reflect_pad_br(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  detail::require_rank4(x.shape(), "reflect_pad_br");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto reflect = [](int64_t i, int64_t len) {
    if (len == 1) return int64_t{0};
    const int64_t period = 2 * (len - 1);
    i %= period;
    return i < len ? i : period - i;
  };
  Tensor<T> out(Shape{n, c, out_h, out_w});
  auto xs = x.data();
  auto ys = out.data();
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t xx = 0; xx < out_w; ++xx)
        ys[(p * out_h + y) * out_w + xx] = xs[(p * h + reflect(y, h)) * w + reflect(xx, w)];
  return out;
}

}  // namespace ngsc
