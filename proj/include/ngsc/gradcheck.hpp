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

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ngsc/tensor.hpp"

namespace ngsc {

struct UnreliableCheckError : NumericError {
  using NumericError::NumericError;
};

struct GradCheckOptions {
  double eps = 1e-4;
  size_t max_coords = 48;
  uint64_t seed = 1;
};

/// Compares tape gradients of a scalar function against central finite
/// differences on a random subset of parameter coordinates. Returns the worst
/// relative error |a - n| / max(|a|, |n|, 1e-8).
///
/// `f` must rebuild its graph from the current parameter values on each call.
template <class F>
double grad_check(F&& f, std::vector<Tensor<double>> params, const GradCheckOptions& opt = {}) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  auto eval = [&]() {
    NoGradScope<double> ng;
    return f().item();
  };
  const double f0 = eval();
  if (eval() != f0) throw UnreliableCheckError("grad_check: function is not deterministic");

  std::vector<std::pair<size_t, size_t>> coords;
  for (size_t i = 0; i < params.size(); ++i)
    for (size_t j = 0; j < static_cast<size_t>(params[i].numel()); ++j) coords.emplace_back(i, j);
  Rng rng(opt.seed);
  const size_t take = std::min(opt.max_coords, coords.size());
  for (size_t i = 0; i < take; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);

  double worst = 0.0;
  for (size_t c = 0; c < take; ++c) {
    auto [pi, ei] = coords[c];
    auto d = params[pi].data();
    const double orig = d[ei];
    d[ei] = orig + opt.eps;
    const double fp = eval();
    d[ei] = orig - opt.eps;
    const double fm = eval();
    d[ei] = orig;
    const double numeric = (fp - fm) / (2.0 * opt.eps);
    const double a = analytic[pi][ei];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ngsc
