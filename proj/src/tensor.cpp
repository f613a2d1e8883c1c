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

#include "lap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lap {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape)
    if (d == 0)
      throw DimensionError("tensor extents must be positive, got " +
                           shape_string(shape));
}
}  // namespace

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
}

template <typename Real>
Tensor<Real> Tensor<Real>::matrix(
    std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<Real> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{m, n}, std::move(data));
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  return shape_[axis];
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename Real>
void Tensor<Real>::fill(Real v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

AxisSplit split_at_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lap
