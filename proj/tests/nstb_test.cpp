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

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ngsc/nstb.hpp"
#include "test_util.hpp"

using namespace ngsc;
using testing_util::check_op;

namespace {

// Cyclic translation of an NCHW map by (dy, dx): out[y] = in[y - dy].
template <class T>
Tensor<T> roll(const Tensor<T>& x, int64_t dy, int64_t dx) {
  const int64_t p = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < p; ++i)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t c = 0; c < w; ++c)
        out[(i * h + (y + dy) % h) * w + (c + dx) % w] = x[(i * h + y) * w + c];
  return out;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

NstbConfig small_config(int64_t dim, bool ngram = true, bool tag = true) {
  NstbConfig c;
  c.dim = dim;
  c.heads = 2;
  c.window = 8;
  c.ngram_enabled = ngram;
  c.tag_mlp_enabled = tag;
  return c;
}

}  // namespace

TEST(WindowPartition, Counting) {
  Rng rng(1);
  auto x = uniform_tensor<float>({1, 16, 16, 1}, rng, -1, 1);
  auto g = window_partition(x, 8, 0, 0);
  EXPECT_EQ(g.windows.shape(), (Shape{4, 64, 1}));

  auto single = uniform_tensor<float>({1, 8, 8, 1}, rng, -1, 1);
  auto g1 = window_partition(single, 8, 0, 0);
  ASSERT_EQ(g1.windows.shape(), (Shape{1, 64, 1}));
  for (int i = 0; i < 64; ++i) EXPECT_EQ(g1.windows[i], single[i]);

  EXPECT_THROW(window_partition(uniform_tensor<float>({1, 12, 16, 1}, rng, 0, 1), 8, 0, 0), ShapeError);
}

TEST(WindowPartition, MergeIsExactInverse) {
  Rng rng(2);
  auto x = uniform_tensor<float>({2, 16, 16, 4}, rng, -1, 1);
  for (int s : {0, 4, 3}) {
    auto y = window_merge(window_partition(x, 8, s, s));
    ASSERT_EQ(y.shape(), x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], x[i]) << "shift " << s;
  }
}

TEST(WindowPartition, ShiftIsCyclic) {
  Tensor<float> x({1, 8, 8, 1});
  for (int i = 0; i < 64; ++i) x[i] = static_cast<float>(i);
  auto g = window_partition(x, 4, 2, 1);
  // Token (0,0) of window (0,0) reads the original pixel (2,1).
  EXPECT_EQ(g.windows[0], 2 * 8 + 1);
  // Last window, last token wraps around to pixel ((7+2)%8, (7+1)%8).
  EXPECT_EQ(g.windows[3 * 16 + 15], 1 * 8 + 0);
}

TEST(WindowPartition, SwappingWindowsTouchesOnlyTheirRegions) {
  Rng rng(3);
  auto x = uniform_tensor<float>({1, 16, 16, 2}, rng, -1, 1);
  auto g = window_partition(x, 8, 0, 0);
  const int64_t per = 64 * 2;
  Tensor<float> swapped = g.windows.clone();
  for (int64_t i = 0; i < per; ++i) std::swap(swapped[1 * per + i], swapped[2 * per + i]);
  auto g2 = g;
  g2.windows = swapped;
  auto y = window_merge(g2);
  // Direct region oracle: window 1 is rows 0-7 x cols 8-15, window 2 rows 8-15 x cols 0-7.
  for (int64_t r = 0; r < 16; ++r)
    for (int64_t c = 0; c < 16; ++c)
      for (int64_t d = 0; d < 2; ++d) {
        const int64_t i = (r * 16 + c) * 2 + d;
        const bool w1 = r < 8 && c >= 8, w2 = r >= 8 && c < 8;
        if (w1)
          EXPECT_EQ(y[i], x[((r + 8) * 16 + c - 8) * 2 + d]);
        else if (w2)
          EXPECT_EQ(y[i], x[((r - 8) * 16 + c + 8) * 2 + d]);
        else
          EXPECT_EQ(y[i], x[i]);
      }
}

TEST(WindowSum, ZeroContextIsIdentity) {
  Rng rng(4);
  auto x = uniform_tensor<float>({1, 16, 16, 3}, rng, -1, 1);
  auto g = window_partition(x, 8, 0, 0);
  auto s = window_sum(g, Tensor<float>({1, 2, 2, 3}, 0.0f));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(s.windows[i], g.windows[i]);
  EXPECT_THROW(window_sum(g, Tensor<float>({1, 2, 3, 3})), ShapeError);
  EXPECT_THROW(window_sum(window_partition(x, 8, 4, 4), Tensor<float>({1, 2, 2, 3})), ShapeError);
}

TEST(WindowSum, SingleWindowShift) {
  Rng rng(5);
  auto x = uniform_tensor<float>({1, 8, 8, 2}, rng, -1, 1);
  auto g = window_partition(x, 8, 0, 0);
  auto s = window_sum(g, Tensor<float>({1, 1, 1, 2}, std::vector<float>{0.25f, -1.5f}));
  for (int64_t t = 0; t < 64; ++t) {
    EXPECT_EQ(s.windows[t * 2], g.windows[t * 2] + 0.25f);
    EXPECT_EQ(s.windows[t * 2 + 1], g.windows[t * 2 + 1] - 1.5f);
  }
}

TEST(WindowSum, ConstantPerWindowAndVariancePreserved) {
  Rng rng(6);
  auto x = uniform_tensor<double>({2, 16, 16, 3}, rng, -1, 1);
  auto ctx = uniform_tensor<double>({2, 2, 2, 3}, rng, -5, 5);
  auto g = window_partition(x, 8, 0, 0);
  auto s = window_sum(g, ctx);
  for (int64_t w = 0; w < 8; ++w)
    for (int64_t d = 0; d < 3; ++d) {
      const double delta0 = s.windows[(w * 64) * 3 + d] - g.windows[(w * 64) * 3 + d];
      double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
      for (int64_t t = 0; t < 64; ++t) {
        const int64_t i = (w * 64 + t) * 3 + d;
        EXPECT_NEAR(s.windows[i] - g.windows[i], delta0, 1e-12);
        m0 += g.windows[i] / 64, m1 += s.windows[i] / 64;
      }
      for (int64_t t = 0; t < 64; ++t) {
        const int64_t i = (w * 64 + t) * 3 + d;
        v0 += std::pow(g.windows[i] - m0, 2), v1 += std::pow(s.windows[i] - m1, 2);
      }
      EXPECT_NEAR(v0, v1, 1e-9);
    }
}

TEST(RelativePosition, IndexRange) {
  for (int m : {2, 4, 8}) {
    auto idx = relative_position_index(m, 8);
    ASSERT_EQ(idx.size(), static_cast<size_t>(m * m * m * m));
    std::set<int64_t> distinct(idx.begin(), idx.end());
    EXPECT_EQ(distinct.size(), static_cast<size_t>((2 * m - 1) * (2 * m - 1)));
    for (auto v : idx) {
      EXPECT_GE(v, 0);
      EXPECT_LT(v, 15 * 15);
    }
    // Diagonal pairs share the zero-offset entry.
    for (int i = 0; i < m * m; ++i) EXPECT_EQ(idx[i * m * m + i], 7 * 15 + 7);
  }
}

TEST(CosineAttention, OrthogonalPairGivesUniformWeights) {
  // Two tokens, one head, tau = 1, every q orthogonal to every k.
  Tensor<double> q({1, 1, 2, 4}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0});
  Tensor<double> k({1, 1, 2, 4}, std::vector<double>{0, 0, 1, 0, 0, 0, 0, 2});
  Tensor<double> v({1, 1, 2, 4}, std::vector<double>{1, 2, 3, 4, -3, 0, 5, 8});
  auto r = cosine_attention(q, k, v, Tensor<double>({1}, 1.0));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.probs[i], 0.5, 1e-12);
  const double mean_v[] = {-1, 1, 4, 6};
  for (int t = 0; t < 2; ++t)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(r.out[t * 4 + c], mean_v[c], 1e-5);
}

TEST(CosineAttention, SelfCosineIsOne) {
  Tensor<double> q({1, 1, 1, 3}, std::vector<double>{0.3, -7, 2});
  Tensor<double> v({1, 1, 1, 3}, 1.0);
  // With one key the score is cos(q,q)/tau; check it through two keys: the
  // probabilities of [q, -q] at tau=1 are softmax([1, -1]).
  Tensor<double> k({1, 1, 2, 3}, std::vector<double>{0.3, -7, 2, -0.3, 7, -2});
  auto r = cosine_attention(q, k, Tensor<double>({1, 1, 2, 3}, 1.0), Tensor<double>({1}, 1.0));
  EXPECT_NEAR(r.probs[0], std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)), 1e-12);
  (void)v;
}

TEST(CosineAttention, Errors) {
  Tensor<double> q({1, 2, 2, 4}, 1.0);
  EXPECT_THROW(cosine_attention(q, q, q, Tensor<double>({2}, std::vector<double>{1, 0})), ConfigError);
  EXPECT_THROW(cosine_attention(q, q, q, Tensor<double>({3}, 1.0)), ShapeError);
  ParameterSet<float> ps;
  Rng rng(1);
  WindowAttention<float> a(ps, "a", 6, 4, 8, rng);
  auto g = window_partition(Tensor<float>({1, 8, 8, 6}, 1.0f), 8, 0, 0);
  EXPECT_THROW(scaled_cosine_attention(g, a), ConfigError);
  NstbConfig bad;
  bad.dim = 6;
  bad.heads = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ScaledCosineAttention, IdenticalTokensReturnValueProjection) {
  ParameterSet<double> ps;
  Rng rng(7);
  const int64_t d = 8;
  WindowAttention<double> a(ps, "a", d, 2, 8, rng);
  // Identity output projection, zero relative bias.
  for (int64_t i = 0; i < d * d; ++i) a.proj.weight[i] = (i / d == i % d) ? 1.0 : 0.0;
  for (auto& v : a.proj.bias.data()) v = 0;
  for (auto& v : a.bias_table.data()) v = 0;
  auto token = uniform_tensor<double>({d}, rng, -1, 1);
  Tensor<double> x({1, 8, 8, d});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = token[i % d];
  auto out = scaled_cosine_attention(window_partition(x, 8, 0, 0), a);
  // Value projection: rows 2d..3d of the qkv map.
  for (int64_t c = 0; c < d; ++c) {
    double want = a.qkv.bias[2 * d + c];
    for (int64_t j = 0; j < d; ++j) want += a.qkv.weight[(2 * d + c) * d + j] * token[j];
    for (int64_t t = 0; t < 64; ++t) EXPECT_NEAR(out.windows[t * d + c], want, 1e-12);
  }
}

TEST(ScaledCosineAttention, RowsSumToOneAndScoresBounded) {
  ParameterSet<float> ps;
  Rng rng(8);
  WindowAttention<float> a(ps, "a", 8, 2, 8, rng);
  auto x = uniform_tensor<float>({2, 16, 8, 8}, rng, -1, 1);
  auto lt = uniform_tensor<float>({4, 8}, rng, -1, 1);
  Tensor<float> probs;
  scaled_cosine_attention(window_partition(x, 8, 4, 4), a, &lt, &probs);
  ASSERT_EQ(probs.shape(), (Shape{4, 2, 64, 68}));
  for (int64_t r = 0; r < probs.numel() / 68; ++r) {
    double s = 0;
    for (int64_t j = 0; j < 68; ++j) {
      EXPECT_GT(probs[r * 68 + j], 0.0f);
      s += probs[r * 68 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  // tau is floored at 0.01 whatever the stored log value.
  for (auto& v : a.log_tau.data()) v = -80.0f;
  auto tau = a.tau();
  for (float t : tau.data()) EXPECT_GE(t, 0.01f);
  scaled_cosine_attention(window_partition(x, 8, 0, 0), a, &lt, &probs);
  for (float p : probs.data()) EXPECT_TRUE(std::isfinite(p));
}

TEST(ScaledCosineAttention, PerImageTokens) {
  ParameterSet<float> ps;
  Rng rng(18);
  WindowAttention<float> a(ps, "a", 8, 2, 8, rng);
  auto x = uniform_tensor<float>({2, 8, 16, 8}, rng, -1, 1);
  auto lt0 = uniform_tensor<float>({4, 8}, rng, -1, 1);
  auto lt1 = uniform_tensor<float>({4, 8}, rng, -1, 1);
  auto both = reshape(concat<float>({lt0, lt1}, 0), Shape{2, 4, 8});
  auto g = window_partition(x, 8, 0, 0);
  auto per = scaled_cosine_attention(g, a, &both).windows;
  auto shared0 = scaled_cosine_attention(g, a, &lt0).windows;
  auto shared1 = scaled_cosine_attention(g, a, &lt1).windows;
  const int64_t half = per.numel() / 2;
  for (int64_t i = 0; i < half; ++i) ASSERT_EQ(per[i], shared0[i]);
  for (int64_t i = half; i < per.numel(); ++i) ASSERT_EQ(per[i], shared1[i]);
  auto wrong = Tensor<float>({3, 4, 8});
  EXPECT_THROW(scaled_cosine_attention(g, a, &wrong), ShapeError);
}

TEST(UnigramEmbed, ShapeConstantAndLinearity) {
  Rng rng(9);
  auto x = uniform_tensor<float>({1, 8, 16, 16}, rng, -1, 1);
  auto w = uniform_tensor<float>({4, 2, 2, 2}, rng, -1, 1);
  auto u = unigram_embed(x, w);
  EXPECT_EQ(u.shape(), (Shape{1, 4, 8, 8}));

  Tensor<float> avg({4, 2, 2, 2}, 0.125f);
  auto uc = unigram_embed(Tensor<float>({1, 8, 16, 16}, 0.7f), avg);
  for (float v : uc.data()) EXPECT_NEAR(v, 0.7f, 1e-6);

  auto u3 = unigram_embed(mul_scalar(x, -2.5f), w);
  for (int64_t i = 0; i < u.numel(); ++i) EXPECT_NEAR(u3[i], -2.5f * u[i], 1e-5);

  EXPECT_THROW(unigram_embed(Tensor<float>({1, 8, 15, 16}), w), ShapeError);
}

TEST(NGramContext, ShapesConstantsAndDisabled) {
  ParameterSet<float> ps;
  Rng rng(10);
  NGramWeights<float> w(ps, "ng", 8, 2, rng);
  auto uni = uniform_tensor<float>({1, 4, 16, 16}, rng, -1, 1);  // from a 32x32 map
  EXPECT_EQ(ngram_context(uni, w, 8).shape(), (Shape{1, 8, 4, 4}));

  Tensor<float> cu({1, 4, 16, 16});
  for (int64_t i = 0; i < cu.numel(); ++i) cu[i] = 0.1f * static_cast<float>(i / 256);
  auto z = ngram_context(cu, w, 8);
  for (int64_t c = 0; c < 8; ++c)
    for (int64_t i = 1; i < 16; ++i) EXPECT_NEAR(z[c * 16 + i], z[c * 16], 1e-6);

  EXPECT_THROW(ngram_context(uni, NGramWeights<float>{}, 8), ConfigError);
}

TEST(NGramContext, FlipEquivariance) {
  // Both directions share the sliding weights, so the forward feature of the
  // point-reflected input is the reflected backward feature of the original.
  for (uint64_t seed : {1, 2, 3}) {
    ParameterSet<double> ps;
    Rng rng(seed);
    NGramWeights<double> w(ps, "ng", 8, 2, rng);
    auto uni = uniform_tensor<double>({1, 4, 8, 8}, rng, -1, 1);
    auto [fwd_flip, unused] = ngram_features(flip_hw(uni), w, 2);
    auto [unused2, bwd] = ngram_features(uni, w, 2);
    EXPECT_LT(max_abs_diff(fwd_flip, flip_hw(bwd)), 1e-12);
    // The two directions are not trivially equal.
    auto [fwd, bwd2] = ngram_features(uni, w, 2);
    EXPECT_GT(max_abs_diff(fwd, bwd2), 1e-3);
  }
}

TEST(TagMlp, ZeroInputAndPositiveTail) {
  ParameterSet<double> ps;
  Rng rng(11);
  TagMlp<double> mlp(ps, "mlp", 4, 8, true, rng);
  for (auto& v : mlp.fc1.bias.data()) v = 0;
  for (auto& v : mlp.fc2.bias.data()) v = 0;
  auto y0 = mlp(Tensor<double>({3, 4}, 0.0));
  for (double v : y0.data()) EXPECT_EQ(v, 0.0);

  // Identity-like first layer (stacked identities), so hidden units equal
  // the inputs and GELU acts as the identity in the far positive tail.
  for (int64_t i = 0; i < 8 * 4; ++i) mlp.fc1.weight[i] = ((i / 4) % 4 == i % 4) ? 1.0 : 0.0;
  Tensor<double> x({2, 4}, std::vector<double>{10, 12, 15, 20, 11, 9, 30, 14});
  auto y = mlp(x);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t o = 0; o < 4; ++o) {
      double want = 0;
      for (int64_t hdn = 0; hdn < 8; ++hdn) want += mlp.fc2.weight[o * 8 + hdn] * x[r * 4 + hdn % 4];
      EXPECT_NEAR(y[r * 4 + o], want, 1e-3);
    }
}

TEST(Nstb, ShiftSchedule) {
  ParameterSet<float> ps;
  Rng rng(12);
  Nstb<float> b(ps, "b", small_config(8), rng);
  EXPECT_EQ(b.shift_for(0, 32, 32), (std::pair<int, int>{4, 4}));
  EXPECT_EQ(b.shift_for(1, 32, 32), (std::pair<int, int>{0, 0}));
  EXPECT_EQ(b.shift_for(2, 4, 4), (std::pair<int, int>{0, 0}));
  EXPECT_EQ(effective_window(8, 4, 4), 4);
  EXPECT_EQ(effective_window(8, 48, 32), 8);
}

TEST(Nstb, ShapePreservedAndAblationLive) {
  Rng rng(13);
  ParameterSet<float> full_ps, abl_ps;
  Rng r1(5), r2(5);
  Nstb<float> full(full_ps, "b", small_config(32), r1);
  Nstb<float> abl(abl_ps, "b", small_config(32, false), r2);
  auto x = uniform_tensor<float>({1, 32, 32, 32}, rng, -1, 1);
  auto lt = uniform_tensor<float>({4, 32}, rng, -1, 1);
  auto y = full(x, &lt, 0);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.data()) ASSERT_TRUE(std::isfinite(v));
  EXPECT_GT(max_abs_diff(y, abl(x, &lt, 0)), 1e-3);
}

TEST(Nstb, TagMlpSwitchChangesOutput) {
  Rng rng(14);
  ParameterSet<float> a_ps, b_ps;
  Rng r1(6), r2(6);
  Nstb<float> tanh_block(a_ps, "b", small_config(16, true, true), r1);
  Nstb<float> erf_block(b_ps, "b", small_config(16, true, false), r2);
  auto x = uniform_tensor<float>({1, 16, 16, 16}, rng, -3, 3);
  const double d = max_abs_diff(tanh_block(x, nullptr, 1), erf_block(x, nullptr, 1));
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 0.1);
}

TEST(Nstb, CyclicTranslationByWindow) {
  Rng rng(15);
  ParameterSet<float> ps;
  Nstb<float> b(ps, "b", small_config(16), rng);
  auto x = uniform_tensor<float>({1, 16, 32, 24}, rng, -1, 1);
  auto lt = uniform_tensor<float>({4, 16}, rng, -1, 1);
  auto shifted_in = roll(x, 8, 8);
  EXPECT_LT(max_abs_diff(b(shifted_in, &lt, 1), roll(b(x, &lt, 1), 8, 8)), 1e-4);
}

TEST(Nstb, ReceptiveFieldExpansion) {
  // Pixel (3, 8) lies in window (0, 1); window (0, 0) is its left neighbor.
  Rng rng(16);
  auto x = uniform_tensor<float>({1, 16, 16, 16}, rng, -1, 1);
  auto lt = uniform_tensor<float>({4, 16}, rng, -1, 1);
  Tensor<float> xp = x.clone();
  // One channel only: a shift common to all channels is erased by layer norm.
  xp[(5 * 16 + 3) * 16 + 8] += 0.5f;
  auto window_change = [&](bool ngram) {
    ParameterSet<float> ps;
    Rng r(21);
    Nstb<float> b(ps, "b", small_config(16, ngram), r);
    auto y0 = b(x, &lt, 1), y1 = b(xp, &lt, 1);
    double m = 0;
    for (int64_t c = 0; c < 16; ++c)
      for (int64_t yy = 0; yy < 8; ++yy)
        for (int64_t xx = 0; xx < 8; ++xx) {
          const int64_t i = (c * 16 + yy) * 16 + xx;
          m = std::max(m, std::abs(static_cast<double>(y1[i]) - y0[i]));
        }
    return m;
  };
  EXPECT_GT(window_change(true), 1e-6);
  EXPECT_LT(window_change(false), 1e-6);
}

TEST(GradCheck, NstbComponentsAcrossSeeds) {
  for (uint64_t seed : {31, 32, 33}) {
    ParameterSet<double> ps;
    Rng rng(seed);
    Nstb<double> b(ps, "b", small_config(8), rng);
    const auto& a = b.attention();
    const auto& ng = b.ngram();
    auto x = uniform_tensor<double>({1, 8, 8, 8}, rng, -1, 1);
    auto lt = uniform_tensor<double>({4, 8}, rng, -1, 1);
    auto tokens = uniform_tensor<double>({1, 8, 8, 8}, rng, -1, 1);

    EXPECT_LT(check_op([&] { return scaled_cosine_attention(window_partition(tokens, 4, 2, 2), a, &lt).windows; },
                       {tokens, lt, a.qkv.weight, a.qkv.bias, a.proj.weight, a.log_tau, a.bias_table}, seed),
              1e-4)
        << "scaled_cosine_attention";
    EXPECT_LT(check_op([&] { return unigram_embed(x, ng.unigram.weight); }, {x, ng.unigram.weight}, seed), 1e-4)
        << "unigram_embed";
    auto uni = uniform_tensor<double>({1, 4, 8, 8}, rng, -1, 1);
    EXPECT_LT(check_op([&] { return ngram_context(uni, ng, 4); },
                       {uni, ng.sliding.weight, ng.sliding.bias, ng.merge.weight, ng.merge.bias}, seed),
              1e-4)
        << "ngram_context";
    auto ctx = uniform_tensor<double>({1, 2, 2, 8}, rng, -1, 1);
    EXPECT_LT(check_op([&] { return window_merge(window_sum(window_partition(tokens, 4, 0, 0), ctx)); },
                       {tokens, ctx}, seed),
              1e-4)
        << "window_sum";
    const auto& mlp = b.mlp();
    auto t16 = uniform_tensor<double>({16, 8}, rng, -2, 2);
    EXPECT_LT(check_op([&] { return mlp(t16); }, {t16, mlp.fc1.weight, mlp.fc1.bias, mlp.fc2.weight}, seed), 1e-4)
        << "tag_mlp";
  }
}

TEST(GradCheck, TagMlpWide) {
  ParameterSet<double> ps;
  Rng rng(40);
  TagMlp<double> mlp(ps, "mlp", 32, 64, true, rng);
  auto x = uniform_tensor<double>({16, 32}, rng, -2, 2);
  EXPECT_LT(grad_check([&] { return mean(mlp(x)); }, {x, mlp.fc1.weight, mlp.fc2.weight, mlp.fc2.bias}), 1e-4);
}

TEST(GradCheck, FullBlock) {
  for (int index : {0, 1}) {
    ParameterSet<double> ps;
    Rng rng(50 + index);
    Nstb<double> b(ps, "b", small_config(16), rng);
    auto x = uniform_tensor<double>({1, 16, 16, 16}, rng, -1, 1);
    auto lt = uniform_tensor<double>({4, 16}, rng, -1, 1);
    auto params = ps.tensors();
    params.push_back(x);
    params.push_back(lt);
    EXPECT_LT(grad_check([&] { return mean(b(x, &lt, index)); }, params, {.max_coords = 96}), 1e-4)
        << "block " << index;
  }
}
