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

// ROI-weighted rate-distortion loss and the Adam optimizer.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ngsc/checkpoint.hpp"
#include "ngsc/ops.hpp"

namespace ngsc {

inline constexpr double kLambdaMin = 0.0018;
inline constexpr double kLambdaMax = 0.0932;
inline constexpr double kDistortionScale = 255.0 * 255.0;
inline constexpr float kRoiBackground = 0.2f;

/// Geometric interpolation between the endpoints; q is clamped to [0, 1].
inline double lambda_of_qindex(double q) {
  if (!(q > 0)) return kLambdaMin;
  if (q >= 1) return kLambdaMax;
  return kLambdaMin * std::pow(kLambdaMax / kLambdaMin, q);
}

/// Per-pixel weights (1 - alpha) + alpha * r normalized to mean 1 within each
/// image. A uniform field yields exactly 1.
template <class T>
Tensor<T> roi_weights(const Tensor<T>& r, double alpha) {
  if (r.rank() != 4 || r.dim(1) != 1) throw ShapeError("roi_weights expects [B,1,H,W], got " + shape_str(r.shape()));
  if (!(alpha >= 0 && alpha < 1)) throw ConfigError("alpha must lie in [0, 1), got " + std::to_string(alpha));
  Tensor<T> w(r.shape());
  const int64_t plane = r.dim(2) * r.dim(3);
  for (int64_t b = 0; b < r.dim(0); ++b) {
    double total = 0;
    T lo = std::numeric_limits<T>::max(), hi = std::numeric_limits<T>::lowest();
    for (int64_t i = b * plane; i < (b + 1) * plane; ++i) {
      const T v = static_cast<T>((1 - alpha) + alpha * std::clamp(static_cast<double>(r[i]), 0.0, 1.0));
      w[i] = v;
      total += v;
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
    const double mean = total / static_cast<double>(plane);
    for (int64_t i = b * plane; i < (b + 1) * plane; ++i) w[i] = lo == hi ? T(1) : static_cast<T>(w[i] / mean);
  }
  return w;
}

/// Mean over the batch of sum(w * (x - x_hat)^2) / (3 * H * W). A null or
/// uniform mask reduces to plain MSE.
template <class T>
Tensor<T> weighted_distortion(const Tensor<T>& x, const Tensor<T>& x_hat, std::type_identity_t<const Tensor<T>*> r,
                              double alpha) {
  if (x.shape() != x_hat.shape()) throw ShapeError("distortion: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  Tensor<T> err = square(sub(x_hat, x));
  if (!r) return mean(err);
  if (r->rank() != 4 || r->dim(0) != x.dim(0) || r->dim(2) != x.dim(2) || r->dim(3) != x.dim(3))
    throw ShapeError("distortion: ROI mask " + shape_str(r->shape()) + " does not cover " + shape_str(x.shape()));
  Tensor<T> w = roi_weights(*r, alpha);
  bool uniform = true;
  for (T v : w.data()) uniform = uniform && v == T(1);
  if (uniform) return mean(err);
  return mean(mul(err, w));
}

/// Bits per pixel: -(sum log2 p_y + sum log2 p_z) / pixel_count.
template <class T>
Tensor<T> rate_term(const Tensor<T>& likelihood_y, const Tensor<T>& likelihood_z, int64_t pixel_count) {
  if (pixel_count <= 0) throw ConfigError("rate_term: pixel_count must be positive");
  const T scale = T(-1) / (static_cast<T>(std::numbers::ln2) * static_cast<T>(pixel_count));
  return mul_scalar(add(sum(log(likelihood_y)), sum(log(likelihood_z))), scale);
}

template <class T>
struct LossTerms {
  Tensor<T> total, distortion, rate;
  double lambda = 0;
};

/// total = lambda(q) * 255^2 * weighted_distortion + bpp, rate averaged over the batch.
template <class T>
LossTerms<T> rd_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& likelihood_y,
                     const Tensor<T>& likelihood_z, std::type_identity_t<const Tensor<T>*> r, double q, double alpha) {
  LossTerms<T> out;
  out.lambda = lambda_of_qindex(q);
  out.distortion = weighted_distortion(x, x_hat, r, alpha);
  out.rate = rate_term(likelihood_y, likelihood_z, x.dim(0) * x.dim(2) * x.dim(3));
  out.total = add(mul_scalar(out.distortion, static_cast<T>(out.lambda * kDistortionScale)), out.rate);
  return out;
}

/// Union of 1-3 axis-aligned rectangles or ellipses (value 1) on a 0.2
/// background. Each shape targets 5-40% of the image area.
inline Tensor<float> sample_roi_mask(Rng& rng, int64_t h, int64_t w) {
  if (h <= 0 || w <= 0) throw ShapeError("sample_roi_mask: empty extent");
  Tensor<float> m({1, 1, h, w}, kRoiBackground);
  const int shapes = 1 + static_cast<int>(rng.below(3));
  const double area = static_cast<double>(h * w);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double frac = rng.uniform(0.05, 0.4);
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));  // width / height
    double sw, sh;
    if (ellipse) {
      sw = 2 * std::sqrt(frac * area * aspect / std::numbers::pi);
      sh = 4 * frac * area / (std::numbers::pi * sw);
    } else {
      sw = std::sqrt(frac * area * aspect);
      sh = frac * area / sw;
    }
    sw = std::min(sw, static_cast<double>(w));
    sh = std::min(sh, static_cast<double>(h));
    const double x0 = rng.uniform(0, w - sw), y0 = rng.uniform(0, h - sh);
    const double cx = x0 + sw / 2, cy = y0 + sh / 2;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        bool inside;
        if (ellipse) {
          const double dx = (px - cx) / (sw / 2), dy = (py - cy) / (sh / 2);
          inside = dx * dx + dy * dy <= 1;
        } else {
          inside = px >= x0 && px < x0 + sw && py >= y0 && py < y0 + sh;
        }
        if (inside) m[y * w + x] = 1.0f;
      }
  }
  return m;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

/// Adam with global gradient-norm clipping. Moments are keyed by parameter
/// name so state can be saved and restored.
template <class T>
class Adam {
 public:
  Adam(const ParameterSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& p : params.items()) {
      m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
      v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  /// Global L2 norm of all parameter gradients (missing gradients count as 0).
  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_->items())
      if (p.tensor.has_grad())
        for (T g : p.tensor.grad()) s += static_cast<double>(g) * g;
    return std::sqrt(s);
  }

  void step() {
    const double norm = grad_norm();
    const double scale = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto& items = params_->items();
    for (size_t k = 0; k < items.size(); ++k) {
      Tensor<T> p = items[k].tensor;
      if (!p.has_grad()) continue;
      auto g = std::as_const(p).grad();
      auto d = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (size_t i = 0; i < d.size(); ++i) {
        const double gi = scale * static_cast<double>(g[i]);
        m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
        v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
        d[i] = static_cast<T>(d[i] - cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps));
      }
    }
  }

  /// Moments as checkpoint records "adam.m.<name>" / "adam.v.<name>".
  void save(Checkpoint& ck) const {
    const auto& items = params_->items();
    for (size_t k = 0; k < items.size(); ++k) {
      ck.records.push_back({"adam.m." + items[k].name, {items[k].tensor.shape(), m_[k]}});
      ck.records.push_back({"adam.v." + items[k].name, {items[k].tensor.shape(), v_[k]}});
    }
    ck.records.push_back({"adam.t", {{1}, {static_cast<float>(t_)}}});
  }

  void load(const Checkpoint& ck) {
    const auto& items = params_->items();
    for (size_t k = 0; k < items.size(); ++k) {
      const auto* m = ck.find("adam.m." + items[k].name);
      const auto* v = ck.find("adam.v." + items[k].name);
      if (!m || !v || m->values.size() != m_[k].size() || v->values.size() != v_[k].size())
        throw FormatError("optimizer state missing or mismatched for " + items[k].name);
      m_[k] = m->values;
      v_[k] = v->values;
    }
    const auto* t = ck.find("adam.t");
    if (!t || t->values.size() != 1) throw FormatError("optimizer state missing step count");
    t_ = static_cast<int64_t>(t->values[0]);
  }

 private:
  const ParameterSet<T>* params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;  // float32 so saved state resumes exactly
  int64_t t_ = 0;
};

}  // namespace ngsc
