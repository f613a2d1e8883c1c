// Copyright 2026 The lapkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over whole-tensor operations.
//
// A Tape records every forward operation in execution order, so each node's
// inputs precede it and the recording is acyclic. Var is a cheap handle to a
// node. Forward values are computed eagerly; backward() walks the tape in
// reverse and only visits nodes that can reach a Parameter.
//
// Broadcasting in the binary ops is restricted to singleton axes of equal
// rank: shapes [4 x 1 x 5] and [1 x 3 x 5] combine to [4 x 3 x 5], while
// [3] and [4 x 3] are rejected.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lap/tensor.hpp"

namespace lap {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;  // always value.shape()

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(Real(0)); }
  std::size_t numel() const { return value.numel(); }
};

template <typename Real>
class Tape;

template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape<Real>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Tape {
 public:
  /// Backward rule of one node. `in_grads[i]` is null when input i does not
  /// lead to any Parameter; otherwise the rule must add its contribution.
  using BackwardFn = std::function<void(
      const Tensor<Real>& out_grad, const Tensor<Real>& out_value,
      std::span<const Tensor<Real>* const> in_values,
      std::span<Tensor<Real>* const> in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value);
  Var<Real> param(Parameter<Real>& p);

  /// Registers a derived node; the building block for custom operations.
  Var<Real> record(Tensor<Real> value, std::vector<Var<Real>> inputs,
                   BackwardFn backward);

  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var<Real>& v) const {
    return nodes_[v.id()].requires_grad;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Propagates d(loss)/d(node) for every node and adds the leaf gradients
  /// into Parameter::grad. Repeated calls accumulate.
  void backward(const Var<Real>& loss);

  /// Same propagation, but returns the per-Parameter gradients (in order of
  /// first use on the tape) instead of touching Parameter::grad.
  std::vector<std::pair<Parameter<Real>*, Tensor<Real>>> backward_collect(
      const Var<Real>& loss);

  /// Gradient of the last backward pass with respect to `v`, or null when `v`
  /// was unreachable.
  const Tensor<Real>* grad(const Var<Real>& v) const;

 private:
  struct Node {
    Tensor<Real> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
    Tensor<Real> grad;
    bool has_grad = false;
  };

  void propagate(const Var<Real>& loss);

  std::deque<Node> nodes_;
};

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}

enum class ReduceKind { Max, Mean, Sum };
enum class PointwiseFn { Relu, Sigmoid, Tanh, Exp, Log, Sqrt, Square };

template <typename Real>
struct ReduceResult {
  Var<Real> values;
  /// Per output position, the selected index along the reduced axis (max
  /// only; ties resolve to the lowest index).
  std::vector<std::size_t> argmax;
};

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);

template <typename Real>
ReduceResult<Real> reduce(const Var<Real>& x, std::size_t axis,
                          ReduceKind kind);

template <typename Real>
Var<Real> pointwise(const Var<Real>& x, PointwiseFn fn);

template <typename Real>
Var<Real> relu(const Var<Real>& x) { return pointwise(x, PointwiseFn::Relu); }
template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  return pointwise(x, PointwiseFn::Sigmoid);
}
template <typename Real>
Var<Real> tanh(const Var<Real>& x) { return pointwise(x, PointwiseFn::Tanh); }
template <typename Real>
Var<Real> exp(const Var<Real>& x) { return pointwise(x, PointwiseFn::Exp); }
template <typename Real>
Var<Real> log(const Var<Real>& x) { return pointwise(x, PointwiseFn::Log); }
template <typename Real>
Var<Real> sqrt(const Var<Real>& x) { return pointwise(x, PointwiseFn::Sqrt); }
template <typename Real>
Var<Real> square(const Var<Real>& x) {
  return pointwise(x, PointwiseFn::Square);
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor);

/// max(x, floor) elementwise; gradient is zero where the floor is active.
template <typename Real>
Var<Real> clamp_min(const Var<Real>& x, Real floor);

/// Numerically stable softmax along `axis` (max-subtracted).
template <typename Real>
Var<Real> softmax(const Var<Real>& x, std::size_t axis);

/// Standardizes every slice of x along `axis` (population variance, `eps`
/// inside the square root), then applies gain and bias of extent
/// x.shape()[axis].
template <typename Real>
Var<Real> affine_norm(const Var<Real>& x, const Var<Real>& gain,
                      const Var<Real>& bias, std::size_t axis,
                      Real eps = Real(1e-5));

/// x / ||x|| along `axis`; a zero-norm slice raises DomainError.
template <typename Real>
Var<Real> l2_normalize(const Var<Real>& x, std::size_t axis);

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape);

/// Elements [begin, end) along `axis`.
template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin,
                std::size_t end);

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis);

/// Sum of every element, as a [1] tensor.
template <typename Real>
Var<Real> sum_all(const Var<Real>& x);

/// Central differences (f(theta + h) - f(theta - h)) / 2h for every scalar of
/// every parameter. `f` must read the parameters' current values.
template <typename Real>
std::vector<Tensor<Real>> finite_diff_grad(
    const std::function<double()>& f, std::span<Parameter<Real>* const> params,
    double h = 1e-5);

}  // namespace lap
