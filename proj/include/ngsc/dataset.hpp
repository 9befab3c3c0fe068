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

// Image-directory ingestion, seeded train/validation split, random crops and
// a procedural image generator for self-contained runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ngsc/image_io.hpp"

namespace ngsc {

struct DatasetOptions {
  std::string dir;
  int64_t crop = 64;
  int64_t min_dim = 64;
  uint64_t seed = 1;
  double val_fraction = 0.15;
};

struct Dataset {
  std::vector<Tensor<float>> train, val;  // [1, 3, H, W]
  std::vector<std::string> train_names, val_names;
  int skipped_small = 0, skipped_unreadable = 0;
};

/// Loads every regular file under `dir` (sorted by name), skips unreadable
/// files and images smaller than min_dim, then splits with a seeded shuffle.
/// `warn` receives one line per skipped file.
inline Dataset ingest_dataset(const DatasetOptions& opt, const std::function<void(const std::string&)>& warn = {}) {
  namespace fs = std::filesystem;
  if (opt.crop <= 0 || opt.crop % 64 != 0) throw ConfigError("crop size must be a positive multiple of 64, got " + std::to_string(opt.crop));
  if (opt.min_dim < opt.crop) throw ConfigError("min_dim must be at least the crop size");
  if (!fs::is_directory(opt.dir)) throw ConfigError("dataset directory not found: " + opt.dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(opt.dir))
    if (e.is_regular_file()) paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());

  Dataset ds;
  std::vector<Tensor<float>> images;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    Tensor<float> img;
    try {
      img = read_image(p);
    } catch (const std::exception& ex) {
      ++ds.skipped_unreadable;
      if (warn) warn("skipping unreadable file " + p + ": " + ex.what());
      continue;
    }
    if (img.dim(2) < opt.min_dim || img.dim(3) < opt.min_dim) {
      ++ds.skipped_small;
      if (warn) warn("skipping " + p + ": smaller than " + std::to_string(opt.min_dim) + " pixels");
      continue;
    }
    images.push_back(img);
    names.push_back(fs::path(p).filename().string());
  }
  if (images.empty())
    throw ConfigError("no usable images in " + opt.dir + " (" + std::to_string(ds.skipped_small) + " too small, " +
                      std::to_string(ds.skipped_unreadable) + " unreadable)");

  std::vector<size_t> order(images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(opt.seed, 0x73706c6974);
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  size_t n_val = static_cast<size_t>(std::lround(opt.val_fraction * static_cast<double>(images.size())));
  if (images.size() >= 2) n_val = std::clamp<size_t>(n_val, opt.val_fraction > 0 ? 1 : 0, images.size() - 1);
  else n_val = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    const size_t i = order[k];
    if (k < n_val) {
      ds.val.push_back(images[i]);
      ds.val_names.push_back(names[i]);
    } else {
      ds.train.push_back(images[i]);
      ds.train_names.push_back(names[i]);
    }
  }
  return ds;
}

/// Top-left corner of a uniformly placed crop x crop window.
inline std::pair<int64_t, int64_t> crop_origin(int64_t h, int64_t w, int64_t crop, Rng& rng) {
  if (h < crop || w < crop) throw ShapeError("crop " + std::to_string(crop) + " exceeds image " + std::to_string(h) + "x" + std::to_string(w));
  const auto top = static_cast<int64_t>(rng.below(static_cast<uint64_t>(h - crop + 1)));
  const auto left = static_cast<int64_t>(rng.below(static_cast<uint64_t>(w - crop + 1)));
  return {top, left};
}

inline Tensor<float> random_crop(const Tensor<float>& img, int64_t crop, Rng& rng) {
  const auto [top, left] = crop_origin(img.dim(2), img.dim(3), crop, rng);
  NoGradScope<float> ng;
  return crop2d(img, top, left, crop, crop);
}

/// Central crop x crop window.
inline Tensor<float> center_crop(const Tensor<float>& img, int64_t crop) {
  if (img.dim(2) < crop || img.dim(3) < crop) throw ShapeError("center_crop: image smaller than crop");
  NoGradScope<float> ng;
  return crop2d(img, (img.dim(2) - crop) / 2, (img.dim(3) - crop) / 2, crop, crop);
}

/// Deterministic natural-looking test image: smooth illumination, blobs and
/// polygons with soft edges, oriented texture and fine grain.
inline Tensor<float> synthesize_image(uint64_t seed, int64_t h, int64_t w) {
  Rng rng = Rng::derive(seed, 0x73796e7468);
  Tensor<float> img({1, 3, h, w});
  const int64_t plane = h * w;
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) c0[c] = rng.uniform(0.1, 0.9), c1[c] = rng.uniform(0.1, 0.9);
  const double ga = rng.uniform(0, 2 * std::numbers::pi);
  const double gx = std::cos(ga), gy = std::sin(ga);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * ((x / double(w) - 0.5) * gx + (y / double(h) - 0.5) * gy) * 1.4;
      for (int c = 0; c < 3; ++c) img[c * plane + y * w + x] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
    }

  auto blend = [&](int64_t y, int64_t x, const double* col, double a) {
    for (int c = 0; c < 3; ++c) {
      float& v = img[c * plane + y * w + x];
      v = static_cast<float>(v * (1 - a) + col[c] * a);
    }
  };

  const int shapes = 4 + static_cast<int>(rng.below(8));
  for (int s = 0; s < shapes; ++s) {
    double col[3];
    for (auto& c : col) c = rng.uniform(0, 1);
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double rx = rng.uniform(0.05, 0.35) * w, ry = rng.uniform(0.05, 0.35) * h;
    const double rot = rng.uniform(0, std::numbers::pi), cr = std::cos(rot), sr = std::sin(rot);
    const double soft = rng.uniform(0.5, 3.0);
    const int kind = static_cast<int>(rng.below(3));  // ellipse, rectangle, stripes
    const double freq = rng.uniform(0.15, 0.8), shade = rng.uniform(-0.3, 0.3);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cr + dy * sr) / rx, v = (-dx * sr + dy * cr) / ry;
        double dist;  // signed distance proxy in pixels, negative inside
        if (kind == 0)
          dist = (std::sqrt(u * u + v * v) - 1) * std::min(rx, ry);
        else
          dist = (std::max(std::abs(u), std::abs(v)) - 1) * std::min(rx, ry);
        const double a = 1 / (1 + std::exp(dist / soft));
        if (a < 1e-3) continue;
        double tinted[3];
        const double mod = kind == 2 ? 0.5 + 0.5 * std::sin(freq * (dx * cr + dy * sr)) : 0.5 + shade * u;
        for (int c = 0; c < 3; ++c) tinted[c] = std::clamp(col[c] * (0.6 + 0.8 * mod), 0.0, 1.0);
        blend(y, x, tinted, a);
      }
  }

  // Fine grain with a little spatial correlation.
  const double grain = rng.uniform(0.005, 0.04);
  std::vector<double> noise(static_cast<size_t>(plane));
  for (auto& n : noise) n = rng.normal();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double n = 0.5 * noise[y * w + x] + 0.25 * noise[y * w + (x + 1) % w] + 0.25 * noise[((y + 1) % h) * w + x];
      for (int c = 0; c < 3; ++c) {
        float& v = img[c * plane + y * w + x];
        v = std::clamp(static_cast<float>(v + grain * n), 0.0f, 1.0f);
      }
    }
  return img;
}

}  // namespace ngsc
