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

#pragma once

#include <cmath>

#include "ngsc/ops.hpp"

namespace ngsc {

/// GELU with the tanh approximation:
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return detail::unary(
      x, "gelu_tanh",
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(kC * (v + kA * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      });
}

/// Exact GELU, x * Phi(x).
template <class T>
Tensor<T> gelu_erf(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.7071067811865476);
  constexpr T kInvSqrt2Pi = T(0.3989422804014327);
  return detail::unary(
      x, "gelu_erf", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v); });
}

/// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const int a = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t len = s[a];
  Tensor<T> out(s);
  auto xs = x.data();
  auto ys = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * len * inner + i;
      T mx = xs[base];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, xs[base + l * inner]);
      T z = 0;
      for (int64_t l = 0; l < len; ++l) z += (ys[base + l * inner] = std::exp(xs[base + l * inner] - mx));
      const T inv = T(1) / z;
      for (int64_t l = 0; l < len; ++l) ys[base + l * inner] *= inv;
    }
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "softmax", {&x}, [xn, yw, outer, inner, len]() {
    auto y = yw.lock();
    xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * len * inner + i;
        T dot = 0;
        for (int64_t l = 0; l < len; ++l) dot += y->grad[base + l * inner] * y->data[base + l * inner];
        for (int64_t l = 0; l < len; ++l) {
          const int64_t k = base + l * inner;
          xn->grad[k] += y->data[k] * (y->grad[k] - dot);
        }
      }
  });
}

/// Per-token normalization over the last axis, then gain * xhat + bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const int64_t c = x.dim(-1);
  if (gain.numel() != c || bias.numel() != c)
    throw ShapeError("layer_norm: gain/bias extent " + std::to_string(gain.numel()) + " vs channels " +
                     std::to_string(c));
  const int64_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto xs = x.data();
  auto ys = out.data();
  auto g = gain.data();
  auto b = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = xs.data() + r * c;
    T mu = 0;
    for (int64_t i = 0; i < c; ++i) mu += px[i];
    mu /= static_cast<T>(c);
    T var = 0;
    for (int64_t i = 0; i < c; ++i) var += (px[i] - mu) * (px[i] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (int64_t i = 0; i < c; ++i) {
      const T h = (px[i] - mu) * rs;
      (*xhat)[r * c + i] = h;
      ys[r * c + i] = g[i] * h + b[i];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "layer_norm", {&x, &gain, &bias}, [xn, gn, bn, yw, xhat, rstd, rows, c]() {
    auto y = yw.lock();
    if (gn->requires_grad) gn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    if (xn->requires_grad) xn->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const T* gy = y->grad.data() + r * c;
      const T* h = xhat->data() + r * c;
      T sum_g = 0, sum_gh = 0;
      for (int64_t i = 0; i < c; ++i) {
        const T gh = gy[i] * gn->data[i];
        sum_g += gh;
        sum_gh += gh * h[i];
        if (gn->requires_grad) gn->grad[i] += gy[i] * h[i];
        if (bn->requires_grad) bn->grad[i] += gy[i];
      }
      if (!xn->requires_grad) continue;
      const T inv_c = T(1) / static_cast<T>(c);
      for (int64_t i = 0; i < c; ++i) {
        const T gh = gy[i] * gn->data[i];
        xn->grad[r * c + i] += (*rstd)[r] * (gh - inv_c * sum_g - h[i] * inv_c * sum_gh);
      }
    }
  });
}

/// Scales each vector along the last axis to unit length: x / max(|x|, eps).
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-6)) {
  const int64_t c = x.dim(-1);
  const int64_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto xs = x.data();
  auto ys = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    T s = 0;
    for (int64_t i = 0; i < c; ++i) s += xs[r * c + i] * xs[r * c + i];
    const T n = std::max(std::sqrt(s), eps);
    (*norms)[r] = n;
    for (int64_t i = 0; i < c; ++i) ys[r * c + i] = xs[r * c + i] / n;
  }
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "l2_normalize", {&x}, [xn, yw, norms, rows, c, eps]() {
    auto y = yw.lock();
    xn->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const T n = (*norms)[r];
      const T* gy = y->grad.data() + r * c;
      const T* py = y->data.data() + r * c;
      if (n <= eps) {
        for (int64_t i = 0; i < c; ++i) xn->grad[r * c + i] += gy[i] / n;
        continue;
      }
      T dot = 0;
      for (int64_t i = 0; i < c; ++i) dot += gy[i] * py[i];
      for (int64_t i = 0; i < c; ++i) xn->grad[r * c + i] += (gy[i] - py[i] * dot) / n;
    }
  });
}

}  // namespace ngsc
