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

// N-gram Swin transformer block: shifted-window cosine attention with
// learned key/value tokens, plus a per-window N-gram context vector.
//
// Layouts: block input/output are NCHW; inside the block tokens are NHWC.

#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "ngsc/module.hpp"
#include "ngsc/nn.hpp"

namespace ngsc {

struct NstbConfig {
  int64_t dim = 32;
  int heads = 4;
  int window = 8;
  int ngram = 2;
  int mlp_ratio = 2;
  bool ngram_enabled = true;
  bool tag_mlp_enabled = true;

  void validate() const {
    if (dim < 2 || dim % 2) throw ConfigError("nstb: dim must be even, got " + std::to_string(dim));
    if (heads < 1 || dim % heads) throw ConfigError("nstb: dim " + std::to_string(dim) + " not divisible by heads");
    if (window < 1) throw ConfigError("nstb: window must be positive");
    if (ngram < 1) throw ConfigError("nstb: ngram order must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("nstb: mlp_ratio must be >= 1");
  }
};

/// Largest window that tiles an H x W map without padding.
inline int effective_window(int window, int64_t h, int64_t w) {
  return static_cast<int>(std::gcd(std::gcd(static_cast<int64_t>(window), h), w));
}

// ---------------------------------------------------------------------------
// Window partitioning

template <class T>
struct WindowGrid {
  Tensor<T> windows;  // [B * nWin, M*M, D], windows row-major per image
  int64_t batch = 0, height = 0, width = 0, channels = 0;
  int window = 0;
  int shift_y = 0, shift_x = 0;

  int64_t windows_per_image() const { return (height / window) * (width / window); }
  int64_t tokens() const { return static_cast<int64_t>(window) * window; }
};

/// Cyclic shift by (-dy, -dx) then M x M tiling of an NHWC map.
template <class T>
WindowGrid<T> window_partition(const Tensor<T>& feat, int m, int dy, int dx) {
  if (feat.rank() != 4) throw ShapeError("window_partition expects [B,H,W,D], got " + shape_str(feat.shape()));
  const int64_t b = feat.dim(0), h = feat.dim(1), w = feat.dim(2), d = feat.dim(3);
  if (m < 1 || h % m || w % m)
    throw ShapeError("window_partition: extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(m));
  const int64_t nwy = h / m, nwx = w / m;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(feat.numel()));
  int64_t o = 0;
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t wy = 0; wy < nwy; ++wy)
      for (int64_t wx = 0; wx < nwx; ++wx)
        for (int64_t ty = 0; ty < m; ++ty)
          for (int64_t tx = 0; tx < m; ++tx) {
            const int64_t y = ((wy * m + ty + dy) % h + h) % h;
            const int64_t x = ((wx * m + tx + dx) % w + w) % w;
            for (int64_t c = 0; c < d; ++c) (*idx)[o++] = ((bi * h + y) * w + x) * d + c;
          }
  WindowGrid<T> g;
  g.windows = gather(feat, Shape{b * nwy * nwx, int64_t{m} * m, d}, idx, "window_partition");
  g.batch = b, g.height = h, g.width = w, g.channels = d, g.window = m, g.shift_y = dy, g.shift_x = dx;
  return g;
}

/// Inverse of window_partition, including the inverse shift.
template <class T>
Tensor<T> window_merge(const WindowGrid<T>& g) {
  const int64_t m = g.window;
  if (m < 1 || g.height % m || g.width % m ||
      g.windows.shape() != Shape{g.batch * g.windows_per_image(), m * m, g.channels})
    throw ShapeError("window_merge: windows " + shape_str(g.windows.shape()) + " inconsistent with metadata");
  const int64_t h = g.height, w = g.width, d = g.channels, nwx = w / m;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(g.windows.numel()));
  int64_t o = 0;
  for (int64_t bi = 0; bi < g.batch; ++bi)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t sy = ((y - g.shift_y) % h + h) % h, sx = ((x - g.shift_x) % w + w) % w;
        const int64_t win = (bi * (h / m) + sy / m) * nwx + sx / m;
        const int64_t tok = (sy % m) * m + sx % m;
        for (int64_t c = 0; c < d; ++c) (*idx)[o++] = (win * m * m + tok) * d + c;
      }
  return gather(g.windows, Shape{g.batch, h, w, d}, idx, "window_merge");
}

/// Adds ctx[w] ([B, H/M, W/M, D]) to every token of window w of an unshifted grid.
template <class T>
WindowGrid<T> window_sum(const WindowGrid<T>& g, const Tensor<T>& ctx) {
  if (g.shift_y || g.shift_x) throw ShapeError("window_sum requires an unshifted grid");
  const Shape want{g.batch, g.height / g.window, g.width / g.window, g.channels};
  if (ctx.shape() != want)
    throw ShapeError("window_sum: context " + shape_str(ctx.shape()) + ", expected " + shape_str(want));
  WindowGrid<T> out = g;
  out.windows = add(g.windows, reshape(ctx, Shape{g.batch * g.windows_per_image(), 1, g.channels}));
  return out;
}

// ---------------------------------------------------------------------------
// Attention

/// Index of each (query, key) pair of an m x m window into a (2M-1)^2 table.
inline std::vector<int64_t> relative_position_index(int m, int table_window) {
  if (m > table_window) throw ConfigError("relative_position_index: window larger than table");
  const int64_t span = 2 * table_window - 1, t = int64_t{m} * m;
  std::vector<int64_t> idx(static_cast<size_t>(t * t));
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < t; ++j) {
      const int64_t dy = i / m - j / m + table_window - 1, dx = i % m - j % m + table_window - 1;
      idx[i * t + j] = dy * span + dx;
    }
  return idx;
}

template <class T>
struct AttentionResult {
  Tensor<T> out;    // [NW, h, T, dh]
  Tensor<T> probs;  // [NW, h, T, S]
};

/// softmax(cos(q, k) / tau + bias) v. q: [NW,h,T,dh]; k, v: [NW,h,S,dh];
/// tau: [h]; bias broadcastable to [NW,h,T,S] or null.
template <class T>
AttentionResult<T> cosine_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& tau,
                                    std::type_identity_t<const Tensor<T>*> bias = nullptr) {
  if (q.rank() != 4 || k.rank() != 4 || v.shape() != k.shape() || q.dim(3) != k.dim(3))
    throw ShapeError("cosine_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  const int64_t heads = q.dim(1);
  if (tau.shape() != Shape{heads}) throw ShapeError("cosine_attention: tau must have one entry per head");
  for (T t : tau.data())
    if (!(t > T(0))) throw ConfigError("cosine_attention: tau must be positive");
  Tensor<T> scores = matmul(l2_normalize(q), l2_normalize(k), true);
  scores = div(scores, reshape(tau, Shape{1, heads, 1, 1}));
  if (bias) scores = add(scores, *bias);
  Tensor<T> probs = softmax(scores, -1);
  return {matmul(probs, v), probs};
}

template <class T>
struct WindowAttention {
  Linear<T> qkv, proj;
  Tensor<T> log_tau;     // [heads]; tau = exp(log_tau) + 0.01
  Tensor<T> bias_table;  // [heads, (2M-1)^2]
  int heads = 1;
  int window = 8;

  WindowAttention() = default;
  WindowAttention(ParameterSet<T>& ps, const std::string& name, int64_t dim, int heads_, int window_, Rng& rng)
      : heads(heads_), window(window_) {
    qkv = Linear<T>(ps, name + ".qkv", dim, 3 * dim, rng);
    proj = Linear<T>(ps, name + ".proj", dim, dim, rng);
    log_tau = ps.add(name + ".log_tau", Tensor<T>({heads}, static_cast<T>(std::log(0.1 - 0.01))));
    const int64_t span = 2 * int64_t{window} - 1;
    bias_table = ps.add(name + ".bias_table", normal_tensor<T>({heads, span * span}, rng, 0.02));
  }

  Tensor<T> tau() const { return add_scalar(exp(log_tau), T(0.01)); }
};

/// Relative bias for an m x m window with `learned` extra key columns
/// carrying zero bias. Result: [1, heads, T, T + learned].
template <class T>
Tensor<T> gather_relative_bias(const Tensor<T>& table, int m, int table_window, int64_t learned) {
  const int64_t heads = table.dim(0), entries = table.dim(1), t = int64_t{m} * m, s = t + learned;
  const auto rel = relative_position_index(m, table_window);
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(heads * t * s), -1);
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < t; ++j) (*idx)[(h * t + i) * s + j] = h * entries + rel[i * t + j];
  return gather(table, Shape{1, heads, t, s}, idx, "relative_bias");
}

/// Window self-attention. Queries come from image tokens only; keys and
/// values also see the learned tokens lt: [L, D] shared by the batch, or
/// [B, L, D] per image.
template <class T>
WindowGrid<T> scaled_cosine_attention(const WindowGrid<T>& g, const WindowAttention<T>& a,
                                      std::type_identity_t<const Tensor<T>*> lt = nullptr,
                                      Tensor<T>* probs_out = nullptr) {
  const int64_t nw = g.windows.dim(0), t = g.windows.dim(1), d = g.windows.dim(2);
  if (d % a.heads) throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by heads");
  const int64_t dh = d / a.heads;
  const bool per_image = lt && lt->rank() == 3;
  if (lt && !((lt->rank() == 2 || (per_image && lt->dim(0) == g.batch)) && lt->dim(-1) == d))
    throw ShapeError("attention: learned tokens " + shape_str(lt->shape()) + " for batch " +
                     std::to_string(g.batch) + ", dim " + std::to_string(d));
  const int64_t l = lt ? lt->dim(-2) : 0;
  const int64_t s = t + l;

  Tensor<T> tokens = g.windows;
  if (l) {
    const int64_t per = g.windows_per_image();
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(nw * l * d));
    for (int64_t w = 0; w < nw; ++w) {
      const int64_t base = per_image ? (w / per) * l * d : 0;
      for (int64_t i = 0; i < l * d; ++i) (*idx)[w * l * d + i] = base + i;
    }
    tokens = concat<T>({tokens, gather(*lt, Shape{nw, l, d}, idx, "broadcast_tokens")}, 1);
  }
  Tensor<T> qkv = permute(reshape(a.qkv(tokens), Shape{nw, s, 3, a.heads, dh}), {2, 0, 3, 1, 4});
  Tensor<T> q = slice(reshape(slice(qkv, 0, 0, 1), Shape{nw, a.heads, s, dh}), 2, 0, t);
  Tensor<T> k = reshape(slice(qkv, 0, 1, 1), Shape{nw, a.heads, s, dh});
  Tensor<T> v = reshape(slice(qkv, 0, 2, 1), Shape{nw, a.heads, s, dh});

  Tensor<T> bias = gather_relative_bias(a.bias_table, g.window, a.window, l);
  auto r = cosine_attention(q, k, v, a.tau(), &bias);
  if (probs_out) *probs_out = r.probs;
  WindowGrid<T> out = g;
  out.windows = a.proj(reshape(permute(r.out, {0, 2, 1, 3}), Shape{nw, t, d}));
  return out;
}

// ---------------------------------------------------------------------------
// N-gram context

/// Kernel-2 stride-2 grouped convolution (groups = D/2, no bias) on NCHW:
/// [B, D, H, W] -> [B, D/2, H/2, W/2].
template <class T>
Tensor<T> unigram_embed(const Tensor<T>& x, const Tensor<T>& weight) {
  detail::require_rank4(x.shape(), "unigram_embed");
  if (x.dim(2) % 2 || x.dim(3) % 2)
    throw ShapeError("unigram_embed: odd spatial extent " + shape_str(x.shape()));
  if (x.dim(1) % 2) throw ShapeError("unigram_embed: odd channel count " + shape_str(x.shape()));
  return conv2d(x, weight, nullptr, 2, 0, static_cast<int>(x.dim(1) / 2));
}

template <class T>
struct NGramWeights {
  Conv2d<T> unigram;  // D -> D/2, k2 s2, grouped, no bias
  Conv2d<T> sliding;  // D/2 -> D/2, N x N, shared by both directions
  Conv2d<T> merge;    // 2 * D/2 -> D, 1 x 1
  int order = 2;

  NGramWeights() = default;
  NGramWeights(ParameterSet<T>& ps, const std::string& name, int64_t dim, int order_, Rng& rng) : order(order_) {
    const int64_t half = dim / 2;
    unigram = Conv2d<T>(ps, name + ".unigram", dim, half, 2, 2, 0, rng, static_cast<int>(half), false);
    sliding = Conv2d<T>(ps, name + ".sliding", half, half, order_, 1, 0, rng);
    merge = Conv2d<T>(ps, name + ".merge", 2 * half, dim, 1, 1, 0, rng);
  }
};

/// Forward (toward bottom/right) and backward (toward top/left) N-gram
/// features of uni, both summarized per window. uni: [B, D/2, H/2, W/2].
/// Returns {forward, backward}, each [B, D/2, H/M, W/M].
template <class T>
std::pair<Tensor<T>, Tensor<T>> ngram_features(const Tensor<T>& uni, const NGramWeights<T>& w, int pool) {
  const int pad = w.order - 1;
  auto slide = [&](const Tensor<T>& u) { return w.sliding(pad ? circular_pad_br(u, pad) : u); };
  Tensor<T> fwd = slide(uni);
  Tensor<T> bwd = flip_hw(slide(flip_hw(uni)));
  return {avg_pool2d(fwd, pool), avg_pool2d(bwd, pool)};
}

/// z_ng: [B, D, H/M, W/M] from uni ([B, D/2, H/2, W/2]) for window size m.
template <class T>
Tensor<T> ngram_context(const Tensor<T>& uni, const NGramWeights<T>& w, int m) {
  if (!w.sliding.weight.defined()) throw ConfigError("ngram_context: N-gram context is disabled");
  if (m < 2 || m % 2) throw ConfigError("ngram_context: window " + std::to_string(m) + " must be even");
  auto [fwd, bwd] = ngram_features(uni, w, m / 2);
  return w.merge(concat<T>({fwd, bwd}, 1));
}

// ---------------------------------------------------------------------------
// MLP and block

template <class T>
struct TagMlp {
  Linear<T> fc1, fc2;
  bool tanh_gelu = true;

  TagMlp() = default;
  TagMlp(ParameterSet<T>& ps, const std::string& name, int64_t dim, int64_t hidden, bool tanh_gelu_, Rng& rng)
      : tanh_gelu(tanh_gelu_) {
    fc1 = Linear<T>(ps, name + ".fc1", dim, hidden, rng);
    fc2 = Linear<T>(ps, name + ".fc2", hidden, dim, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = fc1(x);
    return fc2(tanh_gelu ? gelu_tanh(h) : gelu_erf(h));
  }
};

template <class T>
class Nstb {
 public:
  Nstb() = default;
  Nstb(ParameterSet<T>& ps, const std::string& name, const NstbConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    ln1_ = LayerNorm<T>(ps, name + ".ln1", cfg.dim);
    if (cfg.ngram_enabled) ngram_ = NGramWeights<T>(ps, name + ".ngram", cfg.dim, cfg.ngram, rng);
    attn_ = WindowAttention<T>(ps, name + ".attn", cfg.dim, cfg.heads, cfg.window, rng);
    ln2_ = LayerNorm<T>(ps, name + ".ln2", cfg.dim);
    mlp_ = TagMlp<T>(ps, name + ".mlp", cfg.dim, cfg.mlp_ratio * cfg.dim, cfg.tag_mlp_enabled, rng);
  }

  const NstbConfig& config() const { return cfg_; }
  const WindowAttention<T>& attention() const { return attn_; }
  const NGramWeights<T>& ngram() const { return ngram_; }
  const TagMlp<T>& mlp() const { return mlp_; }

  /// Shift applied by block `index` on an h x w map: half a window on
  /// even-numbered blocks, none when one window covers the whole map.
  std::pair<int, int> shift_for(int index, int64_t h, int64_t w) const {
    const int m = effective_window(cfg_.window, h, w);
    if (index % 2 || (m == h && m == w)) return {0, 0};
    return {m / 2, m / 2};
  }

  /// x: [B, D, H, W]; lt: [L, D], [B, L, D] or null. Returns [B, D, H, W].
  Tensor<T> operator()(const Tensor<T>& x, std::type_identity_t<const Tensor<T>*> lt, int index) const {
    detail::require_rank4(x.shape(), "nstb");
    if (x.dim(1) != cfg_.dim)
      throw ShapeError("nstb: expected " + std::to_string(cfg_.dim) + " channels, got " + shape_str(x.shape()));
    const int64_t h = x.dim(2), w = x.dim(3);
    const int m = effective_window(cfg_.window, h, w);

    Tensor<T> tokens = nchw_to_nhwc(x);
    Tensor<T> normed = ln1_(tokens);
    Tensor<T> mixed = normed;
    // A window of odd size (in practice 1x1 maps) has no N-gram neighborhood.
    if (cfg_.ngram_enabled && m % 2 == 0) {
      Tensor<T> uni = unigram_embed(nhwc_to_nchw(normed), ngram_.unigram.weight);
      Tensor<T> ctx = nchw_to_nhwc(ngram_context(uni, ngram_, m));
      mixed = window_merge(window_sum(window_partition(normed, m, 0, 0), ctx));
    }
    auto [dy, dx] = shift_for(index, h, w);
    Tensor<T> attended = window_merge(scaled_cosine_attention(window_partition(mixed, m, dy, dx), attn_, lt));
    Tensor<T> y = add(tokens, attended);
    y = add(y, mlp_(ln2_(y)));
    return nhwc_to_nchw(y);
  }

 private:
  NstbConfig cfg_;
  LayerNorm<T> ln1_, ln2_;
  NGramWeights<T> ngram_;
  WindowAttention<T> attn_;
  TagMlp<T> mlp_;
};

}  // namespace ngsc
