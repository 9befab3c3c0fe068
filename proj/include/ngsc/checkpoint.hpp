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

// Checkpoint file layout (all integers little-endian):
//
//   "NGWT" | u8 version | u32 config_len | config text (key = value lines)
//   u32 record_count | records...
//   record: u32 name_len | name | u32 rank | rank x u32 extents | f32 elements

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "ngsc/module.hpp"

namespace ngsc {

inline constexpr uint8_t kCheckpointVersion = 1;

struct TensorRecord {
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, TensorRecord>> records;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& [n, r] : records)
      if (n == name) return &r;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<uint8_t>& buffer() { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size, const char* what) : p_(data), end_(data + size), what_(what) {}

  void need(size_t n) const {
    if (static_cast<size_t>(end_ - p_) < n) throw FormatError(std::string(what_) + ": truncated data");
  }
  uint8_t u8() {
    need(1);
    return *p_++;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p_[0] | (p_[1] << 8));
    p_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[i]) << (8 * i);
    p_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(p_, p_ + n);
    p_ += n;
    return out;
  }
  size_t remaining() const { return static_cast<size_t>(end_ - p_); }

 private:
  const uint8_t* p_;
  const uint8_t* end_;
  const char* what_;
};

}  // namespace detail

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path);
}

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes("NGWT", 4);
  w.u8(kCheckpointVersion);
  w.str(ck.config_text);
  w.u32(static_cast<uint32_t>(ck.records.size()));
  for (const auto& [name, rec] : ck.records) {
    w.str(name);
    w.u32(static_cast<uint32_t>(rec.shape.size()));
    for (auto e : rec.shape) w.u32(static_cast<uint32_t>(e));
    for (float v : rec.values) w.f32(v);
  }
  return std::move(w.buffer());
}

inline Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  r.need(4);
  if (std::memcmp(bytes.data(), "NGWT", 4) != 0) throw FormatError("checkpoint: bad magic");
  r.bytes(4);
  const uint8_t version = r.u8();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.str();
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    TensorRecord rec;
    const uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    for (uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u32());
    const int64_t n = shape_numel(rec.shape);
    r.need(static_cast<size_t>(n) * 4);
    rec.values.resize(static_cast<size_t>(n));
    for (auto& v : rec.values) v = r.f32();
    ck.records.emplace_back(std::move(name), std::move(rec));
  }
  if (r.remaining()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

template <class T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, std::string config_text) {
  Checkpoint ck;
  ck.config_text = std::move(config_text);
  for (const auto& p : params.items()) {
    TensorRecord rec;
    rec.shape = p.tensor.shape();
    for (T v : p.tensor.data()) rec.values.push_back(static_cast<float>(v));
    ck.records.emplace_back(p.name, std::move(rec));
  }
  return ck;
}

/// Loads every parameter by name; the checkpoint must cover the set exactly.
template <class T>
void load_parameters(const ParameterSet<T>& params, const Checkpoint& ck) {
  if (ck.records.size() != params.size())
    throw FormatError("checkpoint has " + std::to_string(ck.records.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  for (const auto& p : params.items()) {
    const auto* rec = ck.find(p.name);
    if (!rec) throw FormatError("checkpoint missing tensor " + p.name);
    if (rec->shape != p.tensor.shape())
      throw FormatError("checkpoint tensor " + p.name + " has shape " + shape_str(rec->shape) + ", expected " +
                        shape_str(p.tensor.shape()));
    auto d = const_cast<Tensor<T>&>(p.tensor).data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(rec->values[i]);
  }
}

/// FNV-1a over a byte string.
inline uint64_t fnv1a64(const std::vector<uint8_t>& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ngsc
