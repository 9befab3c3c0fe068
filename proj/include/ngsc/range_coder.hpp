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

// Byte-oriented range coder with carry propagation (64-bit low, 32-bit
// range, 16-bit frequencies) and quantized CDF tables.
//
// Table layout: buckets for symbols s_min..s_max, optionally followed by an
// escape bucket. An escaped symbol is followed by its value as 16 raw bits
// (two's complement).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ngsc/tensor.hpp"

namespace ngsc {

inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbTotal = 1u << kProbBits;
inline constexpr int kSymbolMin = -64;
inline constexpr int kSymbolMax = 63;

struct CdfTable {
  int s_min = 0;
  bool escape = false;
  std::vector<uint32_t> cum;  // size buckets + 1; cum.front() = 0, cum.back() = 2^16

  int buckets() const { return static_cast<int>(cum.size()) - 1; }
  int s_max() const { return s_min + buckets() - (escape ? 1 : 0) - 1; }
  uint32_t freq(int bucket) const { return cum[bucket + 1] - cum[bucket]; }
  bool in_range(int32_t s) const { return s >= s_min && s <= s_max(); }
};

/// Quantizes probabilities of symbols s_min, s_min+1, ... to 16-bit
/// frequencies. Every bucket gets at least 1; with `escape` an extra bucket
/// takes the mass 1 - sum(p). Rounding slack goes to the largest bucket.
inline CdfTable build_cdf(const std::vector<double>& probs, int s_min, bool escape = true) {
  if (probs.empty()) throw ConfigError("build_cdf: empty symbol range");
  double total = 0;
  for (double p : probs) {
    if (!(p > 0) || !std::isfinite(p)) throw ConfigError("build_cdf: probabilities must be positive and finite");
    total += p;
  }
  if (total > 1 + 1e-6) throw ConfigError("build_cdf: probabilities sum to " + std::to_string(total) + " > 1");
  std::vector<double> p = probs;
  if (escape) p.push_back(std::max(0.0, 1.0 - total));
  const size_t n = p.size();
  if (n > kProbTotal) throw ConfigError("build_cdf: too many symbols");
  const double spread = static_cast<double>(kProbTotal - n);
  std::vector<uint32_t> f(n);
  uint64_t sum = 0;
  for (size_t i = 0; i < n; ++i) {
    f[i] = 1 + static_cast<uint32_t>(std::floor(p[i] * spread));
    sum += f[i];
  }
  const size_t top = static_cast<size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  if (sum <= kProbTotal) {
    f[top] += static_cast<uint32_t>(kProbTotal - sum);
  } else {
    // Only reachable through rounding when the inputs sum to just above 1.
    uint64_t excess = sum - kProbTotal;
    for (size_t i = 0; excess; i = (i + 1) % n) {
      const size_t j = (top + i) % n;
      const uint64_t take = std::min<uint64_t>(excess, f[j] - 1);
      f[j] -= static_cast<uint32_t>(take);
      excess -= take;
    }
  }
  CdfTable t;
  t.s_min = s_min;
  t.escape = escape;
  t.cum.resize(n + 1);
  for (size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + f[i];
  return t;
}

/// Code length in bits of s under the quantized table, escape bits included.
inline double quantized_bits(const CdfTable& t, int32_t s) {
  if (t.in_range(s)) return kProbBits - std::log2(static_cast<double>(t.freq(s - t.s_min)));
  if (!t.escape) throw ConfigError("symbol " + std::to_string(s) + " outside table range without escape");
  return kProbBits - std::log2(static_cast<double>(t.freq(t.buckets() - 1))) + 16.0;
}

class RangeEncoder {
 public:
  void encode(uint32_t start, uint32_t size) {
    range_ >>= kProbBits;
    low_ += static_cast<uint64_t>(start) * range_;
    range_ *= size;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void encode_symbol(const CdfTable& t, int32_t s) {
    if (t.in_range(s)) {
      const int b = s - t.s_min;
      encode(t.cum[b], t.freq(b));
      return;
    }
    if (!t.escape) throw ConfigError("symbol " + std::to_string(s) + " outside table range without escape");
    if (s < -32768 || s > 32767) throw ConfigError("symbol " + std::to_string(s) + " exceeds 16-bit escape range");
    const int b = t.buckets() - 1;
    encode(t.cum[b], t.freq(b));
    encode(static_cast<uint16_t>(static_cast<int16_t>(s)), 1);
  }

  std::vector<uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  static constexpr uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(static_cast<uint32_t>(low_) >> 24);
    }
    ++cache_size_;
    low_ = static_cast<uint64_t>(static_cast<uint32_t>(low_) << 8);
  }

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size) : p_(data), end_(data + size) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  /// Decodes a value in [0, 2^16) and removes its interval [start, start+size).
  template <class Find>
  uint32_t decode(Find find) {
    range_ >>= kProbBits;
    const uint32_t v = code_ / range_;
    if (v >= kProbTotal) throw FormatError("range decoder: corrupt stream");
    uint32_t start = 0, size = 0;
    const uint32_t sym = find(v, start, size);
    code_ -= start * range_;
    range_ *= size;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
    return sym;
  }

  int32_t decode_symbol(const CdfTable& t) {
    const uint32_t b = decode([&](uint32_t v, uint32_t& start, uint32_t& size) {
      const auto it = std::upper_bound(t.cum.begin(), t.cum.end(), v);
      const uint32_t k = static_cast<uint32_t>(it - t.cum.begin()) - 1;
      start = t.cum[k];
      size = t.cum[k + 1] - t.cum[k];
      return k;
    });
    if (!t.escape || static_cast<int>(b) < t.buckets() - 1) return t.s_min + static_cast<int32_t>(b);
    const uint32_t raw = decode([](uint32_t v, uint32_t& start, uint32_t& size) {
      start = v;
      size = 1;
      return v;
    });
    return static_cast<int16_t>(static_cast<uint16_t>(raw));
  }

 private:
  static constexpr uint32_t kTop = 1u << 24;

  uint8_t next() {
    if (p_ == end_) throw FormatError("range decoder: truncated stream");
    return *p_++;
  }

  const uint8_t* p_;
  const uint8_t* end_;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

/// Encodes symbols[i] with *tables[i].
inline std::vector<uint8_t> range_encode(const std::vector<int32_t>& symbols, const std::vector<const CdfTable*>& tables) {
  if (symbols.size() != tables.size())
    throw ConfigError("range_encode: " + std::to_string(symbols.size()) + " symbols but " +
                      std::to_string(tables.size()) + " tables");
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) enc.encode_symbol(*tables[i], symbols[i]);
  return enc.finish();
}

inline std::vector<int32_t> range_decode(const std::vector<uint8_t>& bytes, const std::vector<const CdfTable*>& tables,
                                         size_t count) {
  if (count != tables.size())
    throw ConfigError("range_decode: " + std::to_string(count) + " symbols but " + std::to_string(tables.size()) +
                      " tables");
  RangeDecoder dec(bytes.data(), bytes.size());
  std::vector<int32_t> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = dec.decode_symbol(*tables[i]);
  return out;
}

}  // namespace ngsc
