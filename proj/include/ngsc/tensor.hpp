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
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ngsc {

// Error taxonomy shared by every module.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradient support.
///
/// Copies alias the same storage; use clone() for a deep copy. Shape extents
/// must be positive.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape)
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    node_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (static_cast<int64_t>(values.size()) != numel())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(this->shape()));
    node_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
    return node_->shape[static_cast<size_t>(axis)];
  }

  std::span<T> data() & { return node_->data; }
  std::span<const T> data() const& { return node_->data; }
  // A temporary may hold the last reference to its storage.
  std::span<const T> data() && = delete;
  T& operator[](int64_t i) { return node_->data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return node_->data[static_cast<size_t>(i)]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Deep copy without gradient history.
  Tensor clone() const {
    Tensor out(shape());
    out.node_->data = node_->data;
    return out;
  }
  Tensor detach() const { return clone(); }

  /// Same data reinterpreted as another scalar type.
  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape());
    auto src = data();
    auto dst = out.data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
    return out;
  }

  const detail::NodePtr<T>& node() const { return node_; }

 private:
  detail::NodePtr<T> node_;
};

/// Ordered record of differentiable operations; replayed in reverse by backward().
template <class T>
class Tape {
 public:
  struct Entry {
    detail::NodePtr<T> output;
    std::function<void()> backward;
  };

  void record(detail::NodePtr<T> output, std::function<void()> fn) {
    entries_.push_back({std::move(output), std::move(fn)});
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Populates grad for every reachable leaf; leaf gradients accumulate across calls.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (entries_.empty()) throw std::logic_error("backward called on an empty tape");
    for (auto& e : entries_)
      if (!e.output->grad.empty()) std::fill(e.output->grad.begin(), e.output->grad.end(), T(0));
    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // unreachable from loss
      it->backward();
    }
  }

  static Tape* current() { return current_; }

 private:
  template <class>
  friend class TapeScope;
  static inline thread_local Tape* current_ = nullptr;
  std::vector<Entry> entries_;
};

/// Makes a tape the recording target for operations on this thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : TapeScope(&tape) {}
  ~TapeScope() { Tape<T>::current_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 protected:
  explicit TapeScope(Tape<T>* tape) : prev_(Tape<T>::current_) { Tape<T>::current_ = tape; }

 private:
  Tape<T>* prev_;
};

/// Disables recording for the current thread (inference).
template <class T>
class NoGradScope : public TapeScope<T> {
 public:
  NoGradScope() : TapeScope<T>(static_cast<Tape<T>*>(nullptr)) {}
};

template <class T>
void backward(const Tensor<T>& loss) {
  auto* tape = Tape<T>::current();
  if (!tape) throw std::logic_error("backward called without an active tape");
  tape->backward(loss);
}

namespace detail {

inline bool& finite_checks_enabled() {
  static thread_local bool enabled = true;
  return enabled;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (const T v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// True when an op with these inputs must be recorded.
template <class T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current()) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

/// Finalizes an op output: finiteness check and optional tape record.
template <class T, class F>
Tensor<T> finish(Tensor<T> out, const char* op, std::initializer_list<const Tensor<T>*> inputs, F&& fn) {
  check_finite(out, op);
  if (needs_grad<T>(inputs)) {
    out.set_requires_grad(true);
    Tape<T>::current()->record(out.node(), std::forward<F>(fn));
  }
  return out;
}

}  // namespace detail

/// Deterministic 64-bit generator with platform-independent real draws.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  /// Independent stream derived from (seed, a, b).
  static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return Rng(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ mix(a + 0x632be59bd9b4e019ULL) ^
                   mix(b + 0x85157af5ULL)));
  }

  uint64_t next() { return gen_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? static_cast<uint64_t>(uniform() * static_cast<double>(n)) : 0; }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::mt19937_64 gen_;
};

template <class T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

}  // namespace ngsc
