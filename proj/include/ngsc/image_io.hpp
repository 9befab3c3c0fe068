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

// 8-bit image files <-> [1, C, H, W] float tensors in [0, 1]. PNG goes
// through libpng; binary PPM (P6) and PGM (P5) are handled directly.

#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "ngsc/checkpoint.hpp"

namespace ngsc {

inline uint8_t to_byte(float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

namespace detail {

/// Interleaved 8-bit samples -> [1, channels, h, w].
inline Tensor<float> planar_from_interleaved(const uint8_t* px, int64_t h, int64_t w, int64_t channels) {
  Tensor<float> t({1, channels, h, w});
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t i = 0; i < h * w; ++i) t[c * h * w + i] = px[i * channels + c] / 255.0f;
  return t;
}

inline std::vector<uint8_t> interleaved_from_planar(const Tensor<float>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || (t.dim(1) != 1 && t.dim(1) != 3))
    throw ShapeError("image tensor must be [1,1|3,H,W], got " + shape_str(t.shape()));
  const int64_t c = t.dim(1), n = t.dim(2) * t.dim(3);
  std::vector<uint8_t> out(static_cast<size_t>(c * n));
  for (int64_t k = 0; k < c; ++k)
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i * c + k)] = to_byte(t[k * n + i]);
  return out;
}

inline Tensor<float> decode_png(const std::vector<uint8_t>& bytes, bool gray, const std::string& what) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw FormatError(what + ": " + img.message);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(what + ": " + img.message);
  }
  return planar_from_interleaved(px.data(), img.height, img.width, gray ? 1 : 3);
}

/// Parses a binary P5/P6 header and returns the pixel offset.
inline size_t parse_pnm_header(const std::vector<uint8_t>& b, char kind, int64_t& w, int64_t& h,
                               const std::string& what) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != kind) throw FormatError(what + ": not a binary P" + std::string(1, kind) + " file");
  size_t pos = 2;
  int64_t fields[3] = {0, 0, 0};
  for (auto& f : fields) {
    while (pos < b.size() && (std::isspace(b[pos]) || b[pos] == '#')) {
      if (b[pos] == '#')
        while (pos < b.size() && b[pos] != '\n') ++pos;
      else
        ++pos;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError(what + ": malformed header");
    while (pos < b.size() && std::isdigit(b[pos]) && f < (1 << 24)) f = f * 10 + (b[pos++] - '0');
  }
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError(what + ": malformed header");
  ++pos;
  w = fields[0], h = fields[1];
  if (w <= 0 || h <= 0) throw FormatError(what + ": empty image");
  if (fields[2] != 255) throw FormatError(what + ": only maxval 255 is supported");
  return pos;
}

}  // namespace detail

/// Reads PNG, PPM (P6) or PGM (P5) by content. gray=false yields [1,3,H,W]
/// (grayscale PNG/PGM are expanded); gray=true yields [1,1,H,W].
inline Tensor<float> read_image(const std::string& path, bool gray = false) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return detail::decode_png(bytes, gray, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    int64_t w = 0, h = 0;
    const char kind = static_cast<char>(bytes[1]);
    const size_t off = detail::parse_pnm_header(bytes, kind, w, h, path);
    const int64_t c = kind == '6' ? 3 : 1;
    if (bytes.size() - off < static_cast<size_t>(w * h * c)) throw FormatError(path + ": truncated pixel data");
    Tensor<float> t = detail::planar_from_interleaved(bytes.data() + off, h, w, c);
    if (gray && c == 3) {
      Tensor<float> g({1, 1, h, w});
      for (int64_t i = 0; i < h * w; ++i) g[i] = (t[i] + t[h * w + i] + t[2 * h * w + i]) / 3.0f;
      return g;
    }
    if (!gray && c == 1) return concat<float>({t, t, t}, 1);
    return t;
  }
  throw FormatError(path + ": unsupported image format (expected PNG, P5 or P6)");
}

inline void write_png(const std::string& path, const Tensor<float>& t) {
  const auto px = detail::interleaved_from_planar(t);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(t.dim(3));
  img.height = static_cast<png_uint_32>(t.dim(2));
  img.format = t.dim(1) == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, px.data(), 0, nullptr))
    throw FormatError(path + ": " + img.message);
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr))
    throw FormatError(path + ": " + img.message);
  out.resize(size);
  write_file(path, out);
}

/// Binary PPM for 3 channels, PGM for 1.
inline void write_pnm(const std::string& path, const Tensor<float>& t) {
  const auto px = detail::interleaved_from_planar(t);
  const std::string head = std::string(t.dim(1) == 3 ? "P6\n" : "P5\n") + std::to_string(t.dim(3)) + " " +
                           std::to_string(t.dim(2)) + "\n255\n";
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), px.begin(), px.end());
  write_file(path, out);
}

/// Chooses the encoder from the extension: .ppm/.pgm -> PNM, otherwise PNG.
inline void write_image(const std::string& path, const Tensor<float>& t) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")
    write_pnm(path, t);
  else
    write_png(path, t);
}

}  // namespace ngsc
