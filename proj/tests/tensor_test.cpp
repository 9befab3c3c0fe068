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
#include <vector>

#include "ngsc/checkpoint.hpp"
#include "ngsc/gradcheck.hpp"
#include "ngsc/nn.hpp"
#include "test_util.hpp"

namespace ngsc {
namespace {

using testing_util::direct_conv2d;

TEST(Conv2d, IdentityKernelIsIdentity) {
  Rng rng(3);
  auto x = uniform_tensor<float>({1, 1, 3, 3}, rng, -1, 1);
  Tensor<float> w({1, 1, 1, 1}, 1.0f);
  auto y = conv2d(x, w);
  ASSERT_EQ(y.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, DepthwiseOnesSumsEachGroup) {
  Tensor<float> x({1, 2, 2, 2}, 1.0f);
  Tensor<float> w({2, 1, 2, 2}, 1.0f);
  auto y = conv2d(x, w, nullptr, 1, 0, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  const auto ref = direct_conv2d(x, w, 1, 0, 2);
  EXPECT_FLOAT_EQ(y[0], 4.0f);
  EXPECT_FLOAT_EQ(y[1], 4.0f);
  EXPECT_FLOAT_EQ(ref[0], y[0]);
  EXPECT_FLOAT_EQ(ref[1], y[1]);
}

TEST(Conv2d, GroupDivisibilityViolated) {
  Tensor<float> x({1, 3, 4, 4}, 1.0f);
  Tensor<float> w({2, 1, 3, 3}, 1.0f);
  EXPECT_THROW(conv2d(x, w, nullptr, 1, 1, 2), ShapeError);
}

TEST(Conv2d, MatchesNestedLoopOracleWithStrideAndPadding) {
  Rng rng(11);
  auto x = uniform_tensor<double>({2, 4, 9, 7}, rng, -1, 1);
  auto w = uniform_tensor<double>({6, 2, 3, 3}, rng, -1, 1);
  auto b = uniform_tensor<double>({6}, rng, -1, 1);
  auto y = conv2d(x, w, &b, 2, 1, 2);
  const auto ref = direct_conv2d(x, w, 2, 1, 2, &b);
  ASSERT_EQ(y.shape(), (Shape{2, 6, 5, 4}));
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(5);
  auto x1 = uniform_tensor<float>({1, 3, 8, 8}, rng, -1, 1);
  auto x2 = uniform_tensor<float>({1, 3, 8, 8}, rng, -1, 1);
  auto w = uniform_tensor<float>({4, 3, 3, 3}, rng, -1, 1);
  const float a = 0.7f, b = -1.3f;
  auto lhs = conv2d(add(mul_scalar(x1, a), mul_scalar(x2, b)), w, nullptr, 1, 1);
  auto rhs = add(mul_scalar(conv2d(x1, w, nullptr, 1, 1), a), mul_scalar(conv2d(x2, w, nullptr, 1, 1), b));
  for (int64_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-5);
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  // <conv(x), y> == <x, conv_transpose(y)> for matching geometry.
  Rng rng(8);
  auto x = uniform_tensor<double>({1, 3, 8, 8}, rng, -1, 1);
  auto y = uniform_tensor<double>({1, 5, 4, 4}, rng, -1, 1);
  auto w = uniform_tensor<double>({5, 3, 4, 4}, rng, -1, 1);
  auto cx = conv2d(x, w, nullptr, 2, 1);
  auto ty = conv_transpose2d(y, w, nullptr, 2, 1);
  ASSERT_EQ(ty.shape(), x.shape());
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(AvgPool2d, Examples) {
  Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_FLOAT_EQ(avg_pool2d(x, 2).item(), 2.5f);

  Tensor<float> c({1, 2, 6, 6}, 0.375f);
  for (int k : {1, 2, 3, 6}) {
    auto p = avg_pool2d(c, k);
    for (float v : p.data()) EXPECT_FLOAT_EQ(v, 0.375f);
  }

  Tensor<float> ramp({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i);
  auto p = avg_pool2d(ramp, 2);
  const std::vector<float> expect = {2.5f, 4.5f, 10.5f, 12.5f};
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(p[i], expect[i]);
}

TEST(AvgPool2d, RejectsNonDivisibleExtents) {
  Tensor<float> x({1, 1, 5, 4}, 1.0f);
  EXPECT_THROW(avg_pool2d(x, 2), ShapeError);
}

TEST(AvgPool2d, CommutesWithScaling) {
  Rng rng(2);
  auto x = uniform_tensor<float>({2, 3, 8, 8}, rng, -2, 2);
  const float c = 3.25f;
  auto a = avg_pool2d(mul_scalar(x, c), 4);
  auto b = mul_scalar(avg_pool2d(x, 4), c);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(GeluTanh, Examples) {
  Tensor<double> x({3}, std::vector<double>{0.0, 3.0, -10.0});
  auto y = gelu_tanh(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 2.99636260791822698, 1e-4);
  EXPECT_NEAR(y[2], 0.0, 1e-6);
}

TEST(Softmax, Examples) {
  auto s0 = softmax(Tensor<float>({3}, 0.0f));
  for (float v : s0.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);

  auto s1 = softmax(Tensor<float>({2}, std::vector<float>{1000.0f, 0.0f}));
  EXPECT_FLOAT_EQ(s1[0], 1.0f);
  EXPECT_FLOAT_EQ(s1[1], 0.0f);

  auto s2 = softmax(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  EXPECT_NEAR(s2[0], 0.0900305731703805, 1e-4);
  EXPECT_NEAR(s2[1], 0.2447284710547977, 1e-4);
  EXPECT_NEAR(s2[2], 0.6652409557748219, 1e-4);
}

TEST(Softmax, InvalidAxis) {
  EXPECT_THROW(softmax(Tensor<float>({2, 3}), 2), ShapeError);
}

TEST(Softmax, SumsToOneAndIsShiftInvariantAlongAnyAxis) {
  Rng rng(4);
  auto x = uniform_tensor<float>({3, 5, 4}, rng, -6, 6);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    auto shifted = softmax(add_scalar(x, 17.0f), axis);
    for (int64_t i = 0; i < s.numel(); ++i) EXPECT_NEAR(s[i], shifted[i], 1e-6);
    auto total = sum_axis(s, axis);
    for (float v : total.data()) EXPECT_NEAR(v, 1.0f, 1e-5);
  }
}

TEST(LayerNorm, Examples) {
  Tensor<float> g({2}, 1.0f), b({2}, 0.0f);
  auto c = layer_norm(Tensor<float>({1, 2}, 4.0f), g, b);
  for (float v : c.data()) EXPECT_EQ(v, 0.0f);

  auto t = layer_norm(Tensor<float>({1, 2}, std::vector<float>{1, 3}), g, b);
  EXPECT_NEAR(t[0], -1.0f, 1e-5);
  EXPECT_NEAR(t[1], 1.0f, 1e-5);

  Tensor<float> g2({2}, std::vector<float>{2.0f, -0.5f});
  auto s = layer_norm(Tensor<float>({1, 2}, std::vector<float>{1, 3}), g2, b);
  EXPECT_NEAR(s[0], 2.0f * t[0], 1e-6);
  EXPECT_NEAR(s[1], -0.5f * t[1], 1e-6);

  EXPECT_THROW(layer_norm(Tensor<float>({1, 3}), g, b), ShapeError);
}

TEST(Backward, LinearAndQuadratic) {
  Tensor<double> w({3}, std::vector<double>{0.5, -1.0, 2.0});
  w.set_requires_grad(true);
  Tensor<double> x({3}, std::vector<double>{3.0, 4.0, -5.0});
  {
    Tape<double> tape;
    TapeScope<double> s(tape);
    backward(sum(mul(w, x)));
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(w.grad()[i], x[i]);

  Tensor<double> p({2}, std::vector<double>{1.0, 2.0});
  p.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> s(tape);
  auto loss = sum(square(p));
  tape.backward(loss);
  EXPECT_EQ(p.grad()[0], 2.0);
  EXPECT_EQ(p.grad()[1], 4.0);
  // Repeated calls accumulate.
  tape.backward(loss);
  EXPECT_EQ(p.grad()[0], 4.0);
  EXPECT_EQ(p.grad()[1], 8.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor<float> w({2}, 1.0f);
  w.set_requires_grad(true);
  Tape<float> tape;
  TapeScope<float> s(tape);
  auto y = mul_scalar(w, 2.0f);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, NonFiniteForwardIsAnError) {
  Tensor<float> x({2}, std::vector<float>{1.0f, -1.0f});
  EXPECT_THROW(log(x), NumericError);
}

TEST(GradCheck, ExactQuadratic) {
  Rng rng(1);
  auto p = uniform_tensor<double>({10}, rng, -1, 1);
  const double err = grad_check([&] { return sum(square(p)); }, {p});
  EXPECT_LT(err, 1e-7);
}

TEST(GradCheck, DetectsNonDeterministicFunction) {
  Tensor<double> p({2}, 1.0);
  int calls = 0;
  auto f = [&] { return add_scalar(sum(p), static_cast<double>(++calls)); };
  EXPECT_THROW(grad_check(f, {p}), UnreliableCheckError);
}

TEST(GradCheck, GeluOfConvolution) {
  for (uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    auto x = uniform_tensor<double>({1, 4, 8, 8}, rng, -1, 1);
    auto w = uniform_tensor<double>({4, 4, 3, 3}, rng, -0.5, 0.5);
    auto b = uniform_tensor<double>({4}, rng, -0.5, 0.5);
    const double err = grad_check([&] { return mean(gelu_tanh(conv2d(x, w, &b, 1, 1))); }, {w, b, x},
                                  {.seed = seed});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, EveryPrimitiveAcrossSeeds) {
  for (uint64_t seed : {11, 12, 13}) {
    Rng rng(seed);
    auto x = uniform_tensor<double>({2, 4, 6, 6}, rng, -1, 1);
    auto w = uniform_tensor<double>({6, 2, 3, 3}, rng, -1, 1);
    auto b = uniform_tensor<double>({6}, rng, -1, 1);
    EXPECT_LT(testing_util::check_op([&] { return conv2d(x, w, &b, 2, 1, 2); }, {x, w, b}, seed), 1e-4) << "conv2d";

    auto wt = uniform_tensor<double>({4, 3, 4, 4}, rng, -1, 1);
    auto bt = uniform_tensor<double>({3}, rng, -1, 1);
    EXPECT_LT(testing_util::check_op([&] { return conv_transpose2d(x, wt, &bt, 2, 1); }, {x, wt, bt}, seed), 1e-4)
        << "conv_transpose2d";
    EXPECT_LT(testing_util::check_op([&] { return avg_pool2d(x, 3); }, {x}, seed), 1e-4) << "avg_pool2d";
    EXPECT_LT(testing_util::check_op([&] { return gelu_tanh(x); }, {x}, seed), 1e-4) << "gelu_tanh";
    EXPECT_LT(testing_util::check_op([&] { return gelu_erf(x); }, {x}, seed), 1e-4) << "gelu_erf";
    EXPECT_LT(testing_util::check_op([&] { return softmax(x, 1); }, {x}, seed), 1e-4) << "softmax";
    EXPECT_LT(testing_util::check_op([&] { return softmax(x, -1); }, {x}, seed), 1e-4) << "softmax last";
    EXPECT_LT(testing_util::check_op([&] { return softplus(x); }, {x}, seed), 1e-4) << "softplus";
    EXPECT_LT(testing_util::check_op([&] { return l2_normalize(x); }, {x}, seed), 1e-4) << "l2_normalize";
    EXPECT_LT(testing_util::check_op([&] { return pad2d(flip_hw(x), 1, 0, 0, 2); }, {x}, seed), 1e-4) << "pad/flip";

    auto g = uniform_tensor<double>({6}, rng, 0.5, 1.5);
    auto be = uniform_tensor<double>({6}, rng, -1, 1);
    auto tok = uniform_tensor<double>({5, 6}, rng, -1, 1);
    EXPECT_LT(testing_util::check_op([&] { return layer_norm(tok, g, be); }, {tok, g, be}, seed), 1e-4) << "layer_norm";

    auto a3 = uniform_tensor<double>({2, 3, 4}, rng, -1, 1);
    auto b3 = uniform_tensor<double>({2, 5, 4}, rng, -1, 1);
    EXPECT_LT(testing_util::check_op([&] { return matmul(a3, b3, true); }, {a3, b3}, seed), 1e-4) << "matmul";
    auto lw = uniform_tensor<double>({3, 4}, rng, -1, 1);
    auto lb = uniform_tensor<double>({3}, rng, -1, 1);
    EXPECT_LT(testing_util::check_op([&] { return linear(a3, lw, &lb); }, {a3, lw, lb}, seed), 1e-4) << "linear";

    auto bc = uniform_tensor<double>({1, 3, 1}, rng, 0.5, 2);
    EXPECT_LT(testing_util::check_op([&] { return div(a3, bc); }, {a3, bc}, seed), 1e-4) << "broadcast div";
    EXPECT_LT(testing_util::check_op([&] { return mul(a3, bc); }, {a3, bc}, seed), 1e-4) << "broadcast mul";
    EXPECT_LT(testing_util::check_op([&] { return concat<double>({a3, b3}, 1); }, {a3, b3}, seed), 1e-4) << "concat";
    EXPECT_LT(testing_util::check_op([&] { return permute(a3, {2, 0, 1}); }, {a3}, seed), 1e-4) << "permute";
    EXPECT_LT(testing_util::check_op([&] { return sum_axis(a3, 1); }, {a3}, seed), 1e-4) << "sum_axis";
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParameterSet<float> ps;
  Rng rng(9);
  ps.add("a.weight", uniform_tensor<float>({3, 4}, rng, -1, 1));
  ps.add("b.bias", Tensor<float>({2}, std::vector<float>{-0.0f, 1e-30f}));
  const auto bytes = serialize_checkpoint(make_checkpoint(ps, "channels = 32\n"));
  const auto ck = parse_checkpoint(bytes);
  EXPECT_EQ(ck.config_text, "channels = 32\n");
  EXPECT_EQ(serialize_checkpoint(ck), bytes);
  ParameterSet<float> other;
  auto a = other.add("a.weight", Tensor<float>({3, 4}));
  other.add("b.bias", Tensor<float>({2}));
  load_parameters(other, ck);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], ps.items()[0].tensor[i]);
  EXPECT_EQ(std::memcmp(bytes.data(), "NGWT", 4), 0);
  EXPECT_EQ(bytes[4], kCheckpointVersion);
}

TEST(Checkpoint, RejectsCorruptInput) {
  ParameterSet<float> ps;
  ps.add("w", Tensor<float>({4}, 1.0f));
  auto bytes = serialize_checkpoint(make_checkpoint(ps, ""));
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(parse_checkpoint(truncated), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), FormatError);
  ParameterSet<float> dup;
  dup.add("w", Tensor<float>({4}));
  EXPECT_THROW(dup.add("w", Tensor<float>({4})), ConfigError);
}

}  // namespace
}  // namespace ngsc
