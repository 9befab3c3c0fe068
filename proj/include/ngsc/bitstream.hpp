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

// .ngsc stream layout (little-endian):
//
//   "NGSC" | u8 version | u16 width | u16 height | u8 qindex_mode
//   u16 qindex (value * 65535) | u64 model hash | u32 z_len | u32 y_len
//   z payload | y payload
//
// Symbols are coded channel-major in raster order: z under a per-channel
// logistic table, y under per-element Gaussian tables from (mu, sigma).

#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "ngsc/checkpoint.hpp"
#include "ngsc/codec.hpp"
#include "ngsc/range_coder.hpp"

namespace ngsc {

inline constexpr uint8_t kStreamVersion = 1;
inline constexpr size_t kStreamHeaderBytes = 28;

struct Bitstream {
  uint16_t width = 0, height = 0;
  uint8_t qindex_mode = 0;  // 0: scalar QIndex
  uint16_t qindex = 0;
  uint64_t model_hash = 0;
  std::vector<uint8_t> z_payload, y_payload;

  double q() const { return qindex / 65535.0; }
  size_t byte_size() const { return kStreamHeaderBytes + z_payload.size() + y_payload.size(); }
  bool operator==(const Bitstream&) const = default;
};

inline uint16_t qindex_fixed(double q) {
  return static_cast<uint16_t>(std::lround(std::clamp(q, 0.0, 1.0) * 65535.0));
}

inline std::vector<uint8_t> write_bitstream(const Bitstream& b) {
  detail::ByteWriter w;
  w.bytes("NGSC", 4);
  w.u8(kStreamVersion);
  w.u16(b.width);
  w.u16(b.height);
  w.u8(b.qindex_mode);
  w.u16(b.qindex);
  w.u64(b.model_hash);
  w.u32(static_cast<uint32_t>(b.z_payload.size()));
  w.u32(static_cast<uint32_t>(b.y_payload.size()));
  w.bytes(b.z_payload.data(), b.z_payload.size());
  w.bytes(b.y_payload.data(), b.y_payload.size());
  return std::move(w.buffer());
}

inline Bitstream parse_bitstream(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), "bitstream");
  r.need(4);
  if (std::memcmp(bytes.data(), "NGSC", 4) != 0) throw FormatError("bitstream: bad magic");
  r.bytes(4);
  const uint8_t version = r.u8();
  if (version != kStreamVersion) throw FormatError("bitstream: unsupported version " + std::to_string(version));
  Bitstream b;
  b.width = r.u16();
  b.height = r.u16();
  b.qindex_mode = r.u8();
  if (b.qindex_mode != 0) throw FormatError("bitstream: unsupported qindex mode " + std::to_string(b.qindex_mode));
  b.qindex = r.u16();
  b.model_hash = r.u64();
  const uint32_t zl = r.u32(), yl = r.u32();
  if (b.width == 0 || b.height == 0) throw FormatError("bitstream: zero image extent");
  b.z_payload = r.bytes(zl);
  b.y_payload = r.bytes(yl);
  if (r.remaining()) throw FormatError("bitstream: trailing bytes");
  return b;
}

/// A float model bound to the checkpoint bytes it was loaded from.
struct Model {
  CodecConfig config;
  std::unique_ptr<CodecNet<float>> net;
  uint64_t hash = 0;

  static Model from_checkpoint_bytes(const std::vector<uint8_t>& bytes) {
    Checkpoint ck = parse_checkpoint(bytes);
    Model m;
    m.config = CodecConfig::parse(ck.config_text);
    m.net = std::make_unique<CodecNet<float>>(m.config, 0);
    load_parameters(m.net->parameters(), ck);
    m.hash = fnv1a64(bytes);
    return m;
  }

  static Model load(const std::string& path) { return from_checkpoint_bytes(read_file(path)); }

  /// Serializes `net` and binds the result's hash.
  static std::vector<uint8_t> checkpoint_bytes(const CodecNet<float>& net) {
    return serialize_checkpoint(make_checkpoint(net.parameters(), net.config().to_text()));
  }
};

/// Gaussian tables for y symbols from per-element sigma.
inline std::vector<CdfTable> gaussian_tables(const Tensor<float>& sigma) {
  std::vector<CdfTable> tables;
  tables.reserve(static_cast<size_t>(sigma.numel()));
  std::vector<double> p(kSymbolMax - kSymbolMin + 1);
  for (float s : sigma.data()) {
    for (int k = kSymbolMin; k <= kSymbolMax; ++k)
      p[k - kSymbolMin] = std::max(gaussian_symbol_mass(k, s), kLikelihoodFloor);
    tables.push_back(build_cdf(p, kSymbolMin, true));
  }
  return tables;
}

/// One logistic table per channel of z.
inline std::vector<CdfTable> logistic_tables(const Tensor<float>& loc, const Tensor<float>& log_scale) {
  std::vector<CdfTable> tables;
  std::vector<double> p(kSymbolMax - kSymbolMin + 1);
  for (int64_t c = 0; c < loc.numel(); ++c) {
    const double l = loc[c], s = std::exp(static_cast<double>(log_scale[c]));
    for (int k = kSymbolMin; k <= kSymbolMax; ++k)
      p[k - kSymbolMin] = std::max(logistic_symbol_mass(k, l, s), kLikelihoodFloor);
    tables.push_back(build_cdf(p, kSymbolMin, true));
  }
  return tables;
}

struct EncodeResult {
  Bitstream stream;
  Tensor<float> y_hat, x_hat;  // encoder-side reconstruction, x_hat cropped and clamped
  Tensor<float> likelihood_y;  // under the coded tables' continuous model
  std::vector<int32_t> y_symbols, z_symbols;
  double estimated_bits = 0;   // sum of -log2 of quantized table masses
};

struct DecodeResult {
  Tensor<float> y_hat, x_hat;
};

namespace detail {

inline Conditioning<float> decoder_condition(const CodecNet<float>& net, uint16_t qindex, int64_t h, int64_t w) {
  const int64_t hp = (h + kPadMultiple - 1) / kPadMultiple * kPadMultiple;
  const int64_t wp = (w + kPadMultiple - 1) / kPadMultiple * kPadMultiple;
  return net.derive_condition(Tensor<float>({1, 1, hp, wp}, static_cast<float>(qindex / 65535.0)));
}

}  // namespace detail

/// x: [1, 3, H, W] in [0, 1]; m: [1, 1, H, W] QIndex map (its mean is the
/// transmitted scalar); r: ROI mask or null.
inline EncodeResult encode_image(const Model& model, const Tensor<float>& x, const Tensor<float>& m,
                                 const Tensor<float>* r = nullptr) {
  NoGradScope<float> no_grad;
  const CodecNet<float>& net = *model.net;
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3)
    throw ShapeError("encode_image expects [1,3,H,W], got " + shape_str(x.shape()));
  const int64_t h = x.dim(2), w = x.dim(3);
  if (h > 65535 || w > 65535) throw ShapeError("encode_image: extent exceeds 65535");
  const Shape plane{1, 1, h, w};
  if (m.shape() != plane || (r && r->shape() != plane)) throw ShapeError("encode_image: map extents must be " + shape_str(plane));

  double qsum = 0;
  for (float v : m.data()) qsum += std::clamp(static_cast<double>(v), 0.0, 1.0);
  EncodeResult out;
  Bitstream& b = out.stream;
  b.width = static_cast<uint16_t>(w);
  b.height = static_cast<uint16_t>(h);
  b.qindex = qindex_fixed(qsum / static_cast<double>(m.numel()));
  b.model_hash = model.hash;

  Tensor<float> ones;
  if (!r) ones = Tensor<float>(plane, 1.0f);
  Tensor<float> mp = pad_to_multiple(clamp(m, 0.0f, 1.0f));
  Conditioning<float> enc = net.derive_condition(mp);
  Conditioning<float> dec = detail::decoder_condition(net, b.qindex, h, w);
  Tensor<float> input = concat<float>({pad_to_multiple(x), mp, pad_to_multiple(clamp(r ? *r : ones, 0.0f, 1.0f))}, 1);

  Tensor<float> y = net.analysis(input, enc);
  Tensor<float> z = net.hyper_analysis(y, enc);
  out.z_symbols = quantize_symbols(z, nullptr);
  Tensor<float> z_hat(z.shape());
  for (size_t i = 0; i < out.z_symbols.size(); ++i) z_hat[static_cast<int64_t>(i)] = static_cast<float>(out.z_symbols[i]);

  const auto ztables = logistic_tables(net.prior_loc(), net.prior_log_scale());
  const int64_t zplane = z.dim(2) * z.dim(3);
  std::vector<const CdfTable*> zt(out.z_symbols.size());
  for (size_t i = 0; i < zt.size(); ++i) zt[i] = &ztables[i / static_cast<size_t>(zplane)];
  b.z_payload = range_encode(out.z_symbols, zt);

  auto [mu, sigma] = net.hyper_synthesis(z_hat, dec);
  out.y_symbols = quantize_symbols(y, &mu);
  out.y_hat = Tensor<float>(y.shape());
  for (size_t i = 0; i < out.y_symbols.size(); ++i) {
    const auto k = static_cast<int64_t>(i);
    out.y_hat[k] = static_cast<float>(out.y_symbols[i]) + mu[k];
  }
  const auto ytables = gaussian_tables(sigma);
  std::vector<const CdfTable*> yt(ytables.size());
  for (size_t i = 0; i < yt.size(); ++i) yt[i] = &ytables[i];
  b.y_payload = range_encode(out.y_symbols, yt);

  for (size_t i = 0; i < zt.size(); ++i) out.estimated_bits += quantized_bits(*zt[i], out.z_symbols[i]);
  for (size_t i = 0; i < yt.size(); ++i) out.estimated_bits += quantized_bits(*yt[i], out.y_symbols[i]);
  out.likelihood_y = likelihood_y(out.y_hat, mu, sigma);
  out.x_hat = clamp(crop2d(net.synthesis(out.y_hat, dec), 0, 0, h, w), 0.0f, 1.0f);
  return out;
}

inline DecodeResult decode_image(const Model& model, const Bitstream& b) {
  if (b.model_hash != model.hash)
    throw FormatError("bitstream was produced by a different model checkpoint (hash mismatch)");
  NoGradScope<float> no_grad;
  const CodecNet<float>& net = *model.net;
  const CodecConfig& cfg = model.config;
  const int64_t h = b.height, w = b.width;
  Conditioning<float> dec = detail::decoder_condition(net, b.qindex, h, w);
  const int64_t hp = dec.m_hat.dim(2) * kLatentStride, wp = dec.m_hat.dim(3) * kLatentStride;

  const Shape zshape{1, cfg.hyper_channels, hp / kPadMultiple, wp / kPadMultiple};
  const auto ztables = logistic_tables(net.prior_loc(), net.prior_log_scale());
  const int64_t zplane = zshape[2] * zshape[3];
  std::vector<const CdfTable*> zt(static_cast<size_t>(shape_numel(zshape)));
  for (size_t i = 0; i < zt.size(); ++i) zt[i] = &ztables[i / static_cast<size_t>(zplane)];
  const auto zs = range_decode(b.z_payload, zt, zt.size());
  Tensor<float> z_hat(zshape);
  for (size_t i = 0; i < zs.size(); ++i) z_hat[static_cast<int64_t>(i)] = static_cast<float>(zs[i]);

  auto [mu, sigma] = net.hyper_synthesis(z_hat, dec);
  const auto ytables = gaussian_tables(sigma);
  std::vector<const CdfTable*> yt(ytables.size());
  for (size_t i = 0; i < yt.size(); ++i) yt[i] = &ytables[i];
  const auto ys = range_decode(b.y_payload, yt, yt.size());
  DecodeResult out;
  out.y_hat = Tensor<float>(mu.shape());
  for (size_t i = 0; i < ys.size(); ++i) {
    const auto k = static_cast<int64_t>(i);
    out.y_hat[k] = static_cast<float>(ys[i]) + mu[k];
  }
  out.x_hat = clamp(crop2d(net.synthesis(out.y_hat, dec), 0, 0, h, w), 0.0f, 1.0f);
  return out;
}

}  // namespace ngsc
