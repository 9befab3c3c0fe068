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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <type_traits>
#include <vector>

#include "ngsc/tensor.hpp"

namespace ngsc {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return a;
}

/// Numpy-style broadcast of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// For each element of `out`, the flat index of the source element in `in`.
inline std::vector<int64_t> broadcast_index(const Shape& in, const Shape& out) {
  const size_t r = out.size();
  std::vector<int64_t> stride(r, 0);
  int64_t s = 1;
  for (size_t k = 0; k < in.size(); ++k) {
    const size_t i = in.size() - 1 - k;
    const size_t o = r - 1 - k;
    stride[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const int64_t n = shape_numel(out);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::vector<int64_t> counter(r, 0);
  int64_t cur = 0;
  for (int64_t e = 0; e < n; ++e) {
    idx[static_cast<size_t>(e)] = cur;
    for (size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, DF df) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  auto xn = x.node();
  auto yn = out.node();
  return finish(std::move(out), name, {&x}, [xn, yn = std::weak_ptr(yn), df]() {
    auto y = yn.lock();
    xn->ensure_grad();
    for (size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += y->grad[i] * df(xn->data[i], y->data[i]);
  });
}

// F(a, b) -> value; DA(a, b, y) and DB(a, b, y) -> partial derivatives.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    auto as = a.data();
    auto bs = b.data();
    auto ys = out.data();
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = f(as[i], bs[i]);
    auto an = a.node();
    auto bn = b.node();
    std::weak_ptr<Node<T>> yw = out.node();
    return finish(std::move(out), name, {&a, &b}, [an, bn, yw, da, db]() {
      auto y = yw.lock();
      const size_t n = y->data.size();
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < n; ++i) an->grad[i] += y->grad[i] * da(an->data[i], bn->data[i], y->data[i]);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < n; ++i) bn->grad[i] += y->grad[i] * db(an->data[i], bn->data[i], y->data[i]);
      }
    });
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  auto ia = std::make_shared<std::vector<int64_t>>(broadcast_index(a.shape(), os));
  auto ib = std::make_shared<std::vector<int64_t>>(broadcast_index(b.shape(), os));
  Tensor<T> out(os);
  auto as = a.data();
  auto bs = b.data();
  auto ys = out.data();
  for (size_t i = 0; i < ys.size(); ++i) ys[i] = f(as[(*ia)[i]], bs[(*ib)[i]]);
  auto an = a.node();
  auto bn = b.node();
  std::weak_ptr<Node<T>> yw = out.node();
  return finish(std::move(out), name, {&a, &b}, [an, bn, yw, ia, ib, da, db]() {
    auto y = yw.lock();
    const size_t n = y->data.size();
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      const T av = an->data[(*ia)[i]];
      const T bv = bn->data[(*ib)[i]];
      if (an->requires_grad) an->grad[(*ia)[i]] += y->grad[i] * da(av, bv, y->data[i]);
      if (bn->requires_grad) bn->grad[(*ib)[i]] += y->grad[i] * db(av, bv, y->data[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy broadcasting)

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, "mul_scalar", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// log(1 + e^x), computed without overflow.
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, "softplus", [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

/// Clamp to [lo, hi]; zero gradient outside the interval.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, "clamp", [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "sum", {&x}, [xn, yw]() {
    const T g = yw.lock()->grad[0];
    xn->ensure_grad();
    for (auto& v : xn->grad) v += g;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum along one axis; the axis is kept with extent 1 when keepdim.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false) {
  const int a = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t len = s[a];
  Shape os = s;
  if (keepdim) {
    os[a] = 1;
  } else {
    os.erase(os.begin() + a);
    if (os.empty()) os.push_back(1);
  }
  Tensor<T> out(os);
  auto xs = x.data();
  auto ys = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t i = 0; i < inner; ++i) ys[o * inner + i] += xs[(o * len + l) * inner + i];
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "sum_axis", {&x}, [xn, yw, outer, inner, len]() {
    auto y = yw.lock();
    xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t i = 0; i < inner; ++i) xn->grad[(o * len + l) * inner + i] += y->grad[o * inner + i];
  });
}

// ---------------------------------------------------------------------------
// Layout operations. All of them are index gathers: out[i] = x[index[i]],
// with index -1 producing a zero. The backward pass scatter-adds.

template <class T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<int64_t>> index,
                 const char* name = "gather") {
  Tensor<T> out(std::move(out_shape));
  if (static_cast<int64_t>(index->size()) != out.numel())
    throw ShapeError(std::string(name) + ": index size does not match output shape");
  auto xs = x.data();
  auto ys = out.data();
  for (size_t i = 0; i < ys.size(); ++i) {
    const int64_t k = (*index)[i];
    ys[i] = k < 0 ? T(0) : xs[static_cast<size_t>(k)];
  }
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), name, {&x}, [xn, yw, index]() {
    auto y = yw.lock();
    xn->ensure_grad();
    for (size_t i = 0; i < y->grad.size(); ++i) {
      const int64_t k = (*index)[i];
      if (k >= 0) xn->grad[static_cast<size_t>(k)] += y->grad[i];
    }
  });
}

/// Same elements, new shape (row-major order preserved).
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  Tensor<T> out(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  auto xn = x.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "reshape", {&x}, [xn, yw]() {
    auto y = yw.lock();
    xn->ensure_grad();
    for (size_t i = 0; i < y->grad.size(); ++i) xn->grad[i] += y->grad[i];
  });
}

/// Axis permutation: out axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: permutation rank mismatch");
  const Shape& s = x.shape();
  std::vector<int64_t> in_stride(r, 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  Shape os(r);
  std::vector<int64_t> stride(r);
  for (int i = 0; i < r; ++i) {
    os[i] = s[detail::normalize_axis(perm[i], r)];
    stride[i] = in_stride[perm[i]];
  }
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(x.numel()));
  std::vector<int64_t> counter(r, 0);
  int64_t cur = 0;
  for (auto& v : *idx) {
    v = cur;
    for (int d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < os[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return gather(x, os, idx, "permute");
}

/// Splits a [N, H, W, C] map into contiguous [N, C, H, W] and back.
template <class T>
Tensor<T> nhwc_to_nchw(const Tensor<T>& x) {
  return permute(x, {0, 3, 1, 2});
}
template <class T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x) {
  return permute(x, {0, 2, 3, 1});
}

/// Contiguous slice [start, start + len) along an axis.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  const int a = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  if (start < 0 || len <= 0 || start + len > s[a]) throw ShapeError("slice out of range on " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= s[i];
  Shape os = s;
  os[a] = len;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t i = 0; i < inner; ++i) idx->push_back((o * s[a] + start + l) * inner + i);
  return gather(x, os, idx, "slice");
}

/// Repeats each leading-axis entry `times` times consecutively.
template <class T>
Tensor<T> repeat_interleave(const Tensor<T>& x, int64_t times) {
  Shape os = x.shape();
  const int64_t row = x.numel() / os[0];
  os[0] *= times;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(shape_numel(os)));
  for (int64_t n = 0; n < x.dim(0); ++n)
    for (int64_t t = 0; t < times; ++t)
      for (int64_t i = 0; i < row; ++i) idx->push_back(n * row + i);
  return gather(x, os, idx, "repeat_interleave");
}

/// Concatenation along an axis; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of nothing");
  const int r = xs[0].rank();
  const int a = detail::normalize_axis(axis, r);
  Shape os = xs[0].shape();
  os[a] = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) throw ShapeError("concat rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != a && x.shape()[i] != xs[0].shape()[i])
        throw ShapeError("concat extent mismatch: " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    os[a] += x.shape()[a];
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= os[i];
  for (int i = a + 1; i < r; ++i) inner *= os[i];
  Tensor<T> out(os);
  auto ys = out.data();
  {
    int64_t off = 0;
    for (const auto& x : xs) {
      const int64_t len = x.shape()[a];
      auto s = x.data();
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(s.begin() + o * len * inner, len * inner, ys.begin() + (o * os[a] + off) * inner);
      off += len;
    }
  }
  std::vector<detail::NodePtr<T>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  std::weak_ptr<detail::Node<T>> yw = out.node();
  const int64_t total = os[a];
  auto bw = [nodes, yw, outer, inner, a, total]() {
    auto y = yw.lock();
    int64_t off = 0;
    for (const auto& n : nodes) {
      const int64_t len = n->shape[a];
      if (n->requires_grad) {
        n->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < len * inner; ++i)
            n->grad[o * len * inner + i] += y->grad[(o * total + off) * inner + i];
      }
      off += len;
    }
  };
  detail::check_finite(out, "concat");
  if (Tape<T>::current() && std::any_of(xs.begin(), xs.end(), [](const auto& x) { return x.requires_grad(); })) {
    out.set_requires_grad(true);
    Tape<T>::current()->record(out.node(), bw);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products

/// Batched product over matching leading dims: [..., m, k] x [..., k, n] (or
/// [..., n, k] when transpose_b).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() < 2 || a.rank() != b.rank()) throw ShapeError("matmul rank mismatch");
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    if (a.shape()[i] != b.shape()[i])
      throw ShapeError("matmul batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t m = a.dim(-2), k = a.dim(-1);
  const int64_t kb = transpose_b ? b.dim(-1) : b.dim(-2);
  const int64_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) throw ShapeError("matmul inner mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t batch = a.numel() / (m * k);
  Shape os = a.shape();
  os[r - 1] = n;
  Tensor<T> out(os);
  for (int64_t bi = 0; bi < batch; ++bi) {
    ConstMatMap<T> A(a.data().data() + bi * m * k, m, k);
    MatMap<T> Y(out.data().data() + bi * m * n, m, n);
    if (transpose_b)
      Y.noalias() = A * ConstMatMap<T>(b.data().data() + bi * n * k, n, k).transpose();
    else
      Y.noalias() = A * ConstMatMap<T>(b.data().data() + bi * k * n, k, n);
  }
  auto an = a.node();
  auto bn = b.node();
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "matmul", {&a, &b}, [an, bn, yw, batch, m, k, n, transpose_b]() {
    auto y = yw.lock();
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (int64_t bi = 0; bi < batch; ++bi) {
      ConstMatMap<T> G(y->grad.data() + bi * m * n, m, n);
      ConstMatMap<T> A(an->data.data() + bi * m * k, m, k);
      if (transpose_b) {
        ConstMatMap<T> B(bn->data.data() + bi * n * k, n, k);
        if (an->requires_grad) MatMap<T>(an->grad.data() + bi * m * k, m, k).noalias() += G * B;
        if (bn->requires_grad) MatMap<T>(bn->grad.data() + bi * n * k, n, k).noalias() += G.transpose() * A;
      } else {
        ConstMatMap<T> B(bn->data.data() + bi * k * n, k, n);
        if (an->requires_grad) MatMap<T>(an->grad.data() + bi * m * k, m, k).noalias() += G * B.transpose();
        if (bn->requires_grad) MatMap<T>(bn->grad.data() + bi * k * n, k, n).noalias() += A.transpose() * G;
      }
    }
  });
}

/// Token-wise affine map: [..., in] -> [..., out] with weight [out, in].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, std::type_identity_t<const Tensor<T>*> bias = nullptr) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const int64_t in = weight.dim(1), outc = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outc)) throw ShapeError("linear: bias shape mismatch");
  const int64_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = outc;
  Tensor<T> out(os);
  ConstMatMap<T> X(x.data().data(), rows, in);
  ConstMatMap<T> W(weight.data().data(), outc, in);
  MatMap<T> Y(out.data().data(), rows, outc);
  Y.noalias() = X * W.transpose();
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(bias->data().data(), outc);
    Y.rowwise() += B;
  }
  auto xn = x.node();
  auto wn = weight.node();
  detail::NodePtr<T> bn = bias ? bias->node() : nullptr;
  std::weak_ptr<detail::Node<T>> yw = out.node();
  return detail::finish(std::move(out), "linear", {&x, &weight, bias}, [xn, wn, bn, yw, rows, in, outc]() {
    auto y = yw.lock();
    ConstMatMap<T> G(y->grad.data(), rows, outc);
    if (xn->requires_grad) {
      xn->ensure_grad();
      MatMap<T>(xn->grad.data(), rows, in).noalias() += G * ConstMatMap<T>(wn->data.data(), outc, in);
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      MatMap<T>(wn->grad.data(), outc, in).noalias() += G.transpose() * ConstMatMap<T>(xn->data.data(), rows, in);
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn->grad.data(), outc) += G.colwise().sum();
    }
  });
}

}  // namespace ngsc
