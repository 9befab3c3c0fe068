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

// Interval probability masses of quantized latents. Both densities are
// symmetric, so masses are evaluated at |v| with the far-tail-accurate form.

#pragma once

#include <cmath>
#include <numbers>

#include "ngsc/ops.hpp"

namespace ngsc {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kSigmaFloor = 0.04;

namespace detail {

inline double normal_pdf(double t) { return 0.3989422804014327 * std::exp(-0.5 * t * t); }

/// Mass of the unit bin centred at v under N(0, s^2).
inline double gaussian_mass(double v, double s) {
  const double d = std::abs(v);
  return 0.5 * (std::erfc((d - 0.5) / (s * std::numbers::sqrt2)) - std::erfc((d + 0.5) / (s * std::numbers::sqrt2)));
}

inline double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

inline double logistic_mass(double v, double s) {
  const double d = std::abs(v);
  return sigmoid((0.5 - d) / s) - sigmoid((-0.5 - d) / s);
}

}  // namespace detail

/// Gaussian bin mass Phi((v+0.5)/sigma) - Phi((v-0.5)/sigma), v = y - mu,
/// floored at 1e-9. sigma below 0.04 is clamped.
template <class T>
Tensor<T> likelihood_y(const Tensor<T>& y, const Tensor<T>& mu, const Tensor<T>& sigma) {
  if (y.shape() != mu.shape() || y.shape() != sigma.shape())
    throw ShapeError("likelihood_y: shapes " + shape_str(y.shape()) + ", " + shape_str(mu.shape()) + ", " +
                     shape_str(sigma.shape()));
  const size_t n = static_cast<size_t>(y.numel());
  Tensor<T> out(y.shape());
  // Per element: dP/dv and dP/dsigma (zero where floored or clamped).
  auto dv = std::make_shared<std::vector<double>>(n);
  auto ds = std::make_shared<std::vector<double>>(n);
  auto ys = y.data(), ms = mu.data(), ss = sigma.data();
  auto ps = out.data();
  for (size_t i = 0; i < n; ++i) {
    const bool clamped = static_cast<double>(ss[i]) < kSigmaFloor;
    const double s = clamped ? kSigmaFloor : static_cast<double>(ss[i]);
    const double v = static_cast<double>(ys[i]) - static_cast<double>(ms[i]);
    const double p = detail::gaussian_mass(v, s);
    if (p < kLikelihoodFloor) {
      ps[i] = static_cast<T>(kLikelihoodFloor);
      continue;
    }
    ps[i] = static_cast<T>(p);
    const double u = (v + 0.5) / s, l = (v - 0.5) / s;
    const double pu = detail::normal_pdf(u), pl = detail::normal_pdf(l);
    (*dv)[i] = (pu - pl) / s;
    if (!clamped) (*ds)[i] = (-u * pu + l * pl) / s;
  }
  auto yn = y.node(), mn = mu.node(), sn = sigma.node();
  std::weak_ptr<detail::Node<T>> ow = out.node();
  return detail::finish(std::move(out), "likelihood_y", {&y, &mu, &sigma}, [yn, mn, sn, ow, dv, ds, n]() {
    auto o = ow.lock();
    if (yn->requires_grad) yn->ensure_grad();
    if (mn->requires_grad) mn->ensure_grad();
    if (sn->requires_grad) sn->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(o->grad[i]);
      if (yn->requires_grad) yn->grad[i] += static_cast<T>(g * (*dv)[i]);
      if (mn->requires_grad) mn->grad[i] -= static_cast<T>(g * (*dv)[i]);
      if (sn->requires_grad) sn->grad[i] += static_cast<T>(g * (*ds)[i]);
    }
  });
}

/// Per-channel logistic bin mass c(z+0.5) - c(z-0.5) with
/// c(t) = 1 / (1 + exp(-(t - loc) / exp(log_scale))), floored at 1e-9.
/// z: [B, C, H, W]; loc, log_scale: [C].
template <class T>
Tensor<T> likelihood_z(const Tensor<T>& z, const Tensor<T>& loc, const Tensor<T>& log_scale) {
  if (z.rank() != 4 || loc.shape() != Shape{z.dim(1)} || log_scale.shape() != loc.shape())
    throw ShapeError("likelihood_z: z " + shape_str(z.shape()) + ", loc " + shape_str(loc.shape()) + ", log_scale " +
                     shape_str(log_scale.shape()));
  const int64_t c = z.dim(1), plane = z.dim(2) * z.dim(3), n = z.numel();
  Tensor<T> out(z.shape());
  auto dv = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto dls = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto zs = z.data(), ls = loc.data(), ss = log_scale.data();
  auto ps = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t ch = (i / plane) % c;
    const double s = std::exp(static_cast<double>(ss[ch]));
    const double v = static_cast<double>(zs[i]) - static_cast<double>(ls[ch]);
    const double p = detail::logistic_mass(v, s);
    if (p < kLikelihoodFloor) {
      ps[i] = static_cast<T>(kLikelihoodFloor);
      continue;
    }
    ps[i] = static_cast<T>(p);
    const double u = (v + 0.5) / s, l = (v - 0.5) / s;
    const double su = detail::sigmoid(u), sl = detail::sigmoid(l);
    const double fu = su * (1 - su), fl = sl * (1 - sl);
    (*dv)[i] = (fu - fl) / s;
    (*dls)[i] = -u * fu + l * fl;  // d/dlog_scale = s * d/ds
  }
  auto zn = z.node(), ln = loc.node(), sn = log_scale.node();
  std::weak_ptr<detail::Node<T>> ow = out.node();
  return detail::finish(std::move(out), "likelihood_z", {&z, &loc, &log_scale},
                        [zn, ln, sn, ow, dv, dls, n, c, plane]() {
                          auto o = ow.lock();
                          if (zn->requires_grad) zn->ensure_grad();
                          if (ln->requires_grad) ln->ensure_grad();
                          if (sn->requires_grad) sn->ensure_grad();
                          for (int64_t i = 0; i < n; ++i) {
                            const int64_t ch = (i / plane) % c;
                            const double g = static_cast<double>(o->grad[i]);
                            if (zn->requires_grad) zn->grad[i] += static_cast<T>(g * (*dv)[i]);
                            if (ln->requires_grad) ln->grad[ch] -= static_cast<T>(g * (*dv)[i]);
                            if (sn->requires_grad) sn->grad[ch] += static_cast<T>(g * (*dls)[i]);
                          }
                        });
}

/// Bin mass of integer symbol s under N(0, sigma) (s already offset by mu).
inline double gaussian_symbol_mass(int s, double sigma) {
  return detail::gaussian_mass(static_cast<double>(s), std::max(sigma, kSigmaFloor));
}

inline double logistic_symbol_mass(int s, double loc, double scale) {
  return detail::logistic_mass(static_cast<double>(s) - loc, scale);
}

}  // namespace ngsc
