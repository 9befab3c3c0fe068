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

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ngsc/conv.hpp"

namespace ngsc {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Named, ordered collection of trainable tensors. Names are unique.
template <class T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.push_back({name, t});
    return t;
  }

  const std::vector<Parameter<T>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].tensor;
  }

  int64_t element_count() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : items_) out.push_back(p.tensor);
    return out;
  }

 private:
  std::vector<Parameter<T>> items_;
  std::map<std::string, size_t> index_;
};

/// Copies values between parameter sets of possibly different precision.
template <class Dst, class Src>
void copy_parameters(const ParameterSet<Dst>& dst, const ParameterSet<Src>& src) {
  for (const auto& p : dst.items()) {
    const auto* s = src.find(p.name);
    if (!s) throw ConfigError("missing parameter " + p.name);
    if (s->shape() != p.tensor.shape())
      throw ShapeError("parameter " + p.name + " shape " + shape_str(s->shape()) + " vs " + shape_str(p.tensor.shape()));
    auto d = const_cast<Tensor<Dst>&>(p.tensor).data();
    auto v = s->data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Dst>(v[i]);
  }
}

// Layer building blocks. Weights are initialized uniformly in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)].

template <class T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng, bool with_bias = true) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ps.add(name + ".weight", uniform_tensor<T>({out, in}, rng, -b, b));
    if (with_bias) bias = ps.add(name + ".bias", uniform_tensor<T>({out}, rng, -b, b));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias.defined() ? &bias : nullptr); }
};

template <class T>
struct Conv2d {
  Tensor<T> weight, bias;
  int stride = 1, padding = 0, groups = 1;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int k, int stride_, int padding_,
         Rng& rng, int groups_ = 1, bool with_bias = true)
      : stride(stride_), padding(padding_), groups(groups_) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in / groups * k * k));
    weight = ps.add(name + ".weight", uniform_tensor<T>({out, in / groups, k, k}, rng, -b, b));
    if (with_bias) bias = ps.add(name + ".bias", uniform_tensor<T>({out}, rng, -b, b));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, padding, groups);
  }
};

/// Stride-2 upsampler: kernel 4, padding 1 doubles each extent.
template <class T>
struct ConvTranspose2d {
  Tensor<T> weight, bias;
  int stride = 2, padding = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int k, int stride_,
                  int padding_, Rng& rng)
      : stride(stride_), padding(padding_) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in * k * k) / (stride_ * stride_));
    weight = ps.add(name + ".weight", uniform_tensor<T>({in, out, k, k}, rng, -b, b));
    bias = ps.add(name + ".bias", uniform_tensor<T>({out}, rng, -b, b));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight, &bias, stride, padding); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, int64_t dim) {
    gain = ps.add(name + ".gain", Tensor<T>({dim}, T(1)));
    bias = ps.add(name + ".bias", Tensor<T>({dim}, T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

}  // namespace ngsc
