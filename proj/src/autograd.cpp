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

#include "lap/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Core>

#include "lap/kernels.hpp"

namespace lap {

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::param(Parameter<Real>& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, std::vector<Var<Real>> inputs,
                             BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape() != this)
      throw std::invalid_argument("operation mixes variables of different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
void Tape<Real>::propagate(const Var<Real>& loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss is not on this tape");
  Node& root = nodes_[loss.id()];
  if (root.value.numel() != 1)
    throw DimensionError("backward needs a scalar loss, got shape " +
                         shape_string(root.value.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<Real>();
  }
  root.grad = Tensor<Real>(root.value.shape(), Real(1));
  root.has_grad = true;

  std::vector<const Tensor<Real>*> in_values;
  std::vector<Tensor<Real>*> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto id : n.inputs) {
      Node& in = nodes_[id];
      in_values.push_back(&in.value);
      if (in.requires_grad) {
        if (!in.has_grad) {
          in.grad = Tensor<Real>(in.value.shape());
          in.has_grad = true;
        }
        in_grads.push_back(&in.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(n.grad, n.value, in_values, in_grads);
    // Intermediate gradients are no longer needed once pushed to inputs.
    if (!n.param && i != loss.id()) {
      n.grad = Tensor<Real>();
      n.has_grad = false;
    }
  }
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  propagate(loss);
  for (auto& n : nodes_) {
    if (!n.param || !n.has_grad) continue;
    auto& g = n.param->grad;
    if (g.shape() != n.grad.shape()) g = Tensor<Real>(n.param->value.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  }
}

template <typename Real>
std::vector<std::pair<Parameter<Real>*, Tensor<Real>>>
Tape<Real>::backward_collect(const Var<Real>& loss) {
  propagate(loss);
  std::vector<std::pair<Parameter<Real>*, Tensor<Real>>> out;
  std::map<Parameter<Real>*, std::size_t> slot;
  for (auto& n : nodes_) {
    if (!n.param || !n.has_grad) continue;
    auto it = slot.find(n.param);
    if (it == slot.end()) {
      slot.emplace(n.param, out.size());
      out.emplace_back(n.param, n.grad);
    } else {
      auto& g = out[it->second].second;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  }
  return out;
}

template <typename Real>
const Tensor<Real>* Tape<Real>::grad(const Var<Real>& v) const {
  const Node& n = nodes_.at(v.id());
  return n.has_grad ? &n.grad : nullptr;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

struct BroadcastPlan {
  Shape out;
  Shape loop;  // coalesced iteration extents, strides below match it
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_string(a) +
                         " vs " + shape_string(b));
  const auto sa = row_major_strides(a), sb = row_major_strides(b);
  p.out.resize(a.size());
  p.stride_a.resize(a.size());
  p.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           shape_string(a) + " with " + shape_string(b));
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  // Coalesce neighbouring axes that both operands walk contiguously, so the
  // innermost loop below is as long as possible. `out` then only describes
  // the iteration space; the output tensor keeps the caller's shape.
  Shape extent{p.out.back()};
  std::vector<std::size_t> ca{p.stride_a.back()}, cb{p.stride_b.back()};
  for (std::size_t i = a.size() - 1; i-- > 0;) {
    if (p.stride_a[i] == ca.front() * extent.front() &&
        p.stride_b[i] == cb.front() * extent.front()) {
      extent.front() *= p.out[i];
      continue;
    }
    extent.insert(extent.begin(), p.out[i]);
    ca.insert(ca.begin(), p.stride_a[i]);
    cb.insert(cb.begin(), p.stride_b[i]);
  }
  p.loop = std::move(extent);
  p.stride_a = std::move(ca);
  p.stride_b = std::move(cb);
  return p;
}

// Calls f(o, ia, ib, len, sa, sb) for every innermost run: output elements
// [o, o + len) read a at ia + j * sa and b at ib + j * sb.
template <typename F>
void for_each_broadcast_run(const BroadcastPlan& p, F&& f) {
  if (p.same) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0}, shape_numel(p.out),
      std::size_t{1}, std::size_t{1});
    return;
  }
  const std::size_t rank = p.loop.size();
  const std::size_t inner = p.loop.back();
  const std::size_t sa = p.stride_a.back(), sb = p.stride_b.back();
  const std::size_t rows = shape_numel(p.out) / inner;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    f(o, ia, ib, inner, sa, sb);
    o += inner;
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.loop[ax]) break;
      ia -= p.stride_a[ax] * p.loop[ax];
      ib -= p.stride_b[ax] * p.loop[ax];
      idx[ax] = 0;
    }
  }
}

// Gradient of one operand: d[id + j * sd] += g[o + j] * (other[io + j * so]
// or 1), with a stride-0 destination summed locally.
template <typename Real>
void accumulate_run(Real* d, std::size_t id, std::size_t sd, const Real* g,
                    const Real* other, std::size_t io, std::size_t so,
                    std::size_t len, Real sign) {
  if (sd == 0) {
    Real acc = 0;
    if (other) {
      for (std::size_t j = 0; j < len; ++j) acc += g[j] * other[io + j * so];
    } else {
      for (std::size_t j = 0; j < len; ++j) acc += g[j];
    }
    d[id] += sign * acc;
    return;
  }
  Real* dst = d + id;
  if (other) {
    const Real* src = other + io;
    for (std::size_t j = 0; j < len; ++j) dst[j * sd] += sign * g[j] * src[j * so];
  } else {
    for (std::size_t j = 0; j < len; ++j) dst[j * sd] += sign * g[j];
  }
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename Real>
Tape<Real>& tape_of(const Var<Real>& v) {
  if (!v.valid()) throw std::invalid_argument("operation on an empty variable");
  return *v.tape();
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Real> out(Shape{m, n});
  kernels::gemm(kernels::Trans::No, kernels::Trans::No, m, n, k, av.data(),
                bv.data(), out.data(), false);
  return tape_of(a).record(
      std::move(out), {a, b},
      [m, n, k](const Tensor<Real>& g, const Tensor<Real>&,
                std::span<const Tensor<Real>* const> in,
                std::span<Tensor<Real>* const> dg) {
        using kernels::Trans;
        if (dg[0])  // dA = dC * B^T
          kernels::gemm(Trans::No, Trans::Yes, m, k, n, g.data(), in[1]->data(),
                        dg[0]->data(), true);
        if (dg[1])  // dB = A^T * dC
          kernels::gemm(Trans::Yes, Trans::No, k, n, m, in[0]->data(), g.data(),
                        dg[1]->data(), true);
      });
}

template <typename Real>
ReduceResult<Real> reduce(const Var<Real>& x, std::size_t axis,
                          ReduceKind kind) {
  const auto& xv = x.value();
  const AxisSplit s = split_at_axis(xv.shape(), axis);
  if (s.extent == 0) throw DimensionError("reduce over an empty axis");
  Tensor<Real> out(drop_axis(xv.shape(), axis));
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::Max) argmax.assign(s.outer * s.inner, 0);

  for (std::size_t o = 0; o < s.outer; ++o) {
    const Real* base = xv.data() + o * s.extent * s.inner;
    Real* dst = out.data() + o * s.inner;
    if (kind == ReduceKind::Max) {
      std::size_t* am = argmax.data() + o * s.inner;
      if (s.inner == 1) {
        std::size_t best = 0;
        for (std::size_t e = 1; e < s.extent; ++e)
          if (base[e] > base[best]) best = e;
        dst[0] = base[best];
        am[0] = best;
        continue;
      }
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] = base[i];
      for (std::size_t e = 1; e < s.extent; ++e) {
        const Real* row = base + e * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) {
          const bool gt = row[i] > dst[i];
          dst[i] = gt ? row[i] : dst[i];
          am[i] = gt ? e : am[i];
        }
      }
    } else {
      if (s.inner == 1) {
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t e = 0; e < s.extent; ++e) acc += base[e];
        dst[0] = acc;
      } else {
        for (std::size_t e = 0; e < s.extent; ++e) {
          const Real* row = base + e * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
        }
      }
      if (kind == ReduceKind::Mean) {
        const Real inv = Real(1) / static_cast<Real>(s.extent);
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= inv;
      }
    }
  }

  ReduceResult<Real> r;
  r.argmax = argmax;
  r.values = tape_of(x).record(
      std::move(out), {x},
      [s, kind, am = std::move(argmax)](const Tensor<Real>& g,
                                        const Tensor<Real>&,
                                        std::span<const Tensor<Real>* const>,
                                        std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        Real* dx = dg[0]->data();
        const Real w = kind == ReduceKind::Mean
                           ? Real(1) / static_cast<Real>(s.extent)
                           : Real(1);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const Real* gi = g.data() + o * s.inner;
          Real* base = dx + o * s.extent * s.inner;
          if (kind == ReduceKind::Max) {
            const std::size_t* a = am.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i)
              base[a[i] * s.inner + i] += gi[i];
          } else if (s.inner == 1) {
            const Real v = w * gi[0];
            for (std::size_t e = 0; e < s.extent; ++e) base[e] += v;
          } else {
            for (std::size_t e = 0; e < s.extent; ++e) {
              Real* row = base + e * s.inner;
              for (std::size_t i = 0; i < s.inner; ++i) row[i] += w * gi[i];
            }
          }
        }
      });
  return r;
}

namespace {
// Vectorized transcendental functions come from Eigen's array module. Eigen
// peels unaligned leading elements into a scalar loop whose rounding differs
// from the packet path, so results would depend on where the allocator put
// the buffer. Every element instead goes through an aligned fixed-size block.
template <typename Real, typename F>
void map_aligned(const Real* in, Real* out, std::size_t n, F f) {
  constexpr std::size_t kBlock = 64;
  using Block = Eigen::Array<Real, kBlock, 1>;
  alignas(64) Real a[kBlock];
  alignas(64) Real r[kBlock];
  for (std::size_t i = 0; i < n; i += kBlock) {
    const std::size_t len = std::min(kBlock, n - i);
    std::copy(in + i, in + i + len, a);
    std::fill(a + len, a + kBlock, Real(0));
    Eigen::Map<const Block, Eigen::Aligned64> src(a);
    Eigen::Map<Block, Eigen::Aligned64> dst(r);
    dst = f(src);
    std::copy(r, r + len, out + i);
  }
}
}  // namespace

template <typename Real>
Var<Real> pointwise(const Var<Real>& x, PointwiseFn fn) {
  const auto& xv = x.value();
  Tensor<Real> out(xv.shape());
  const std::size_t n = xv.numel();
  const Real* in = xv.data();
  Real* o = out.data();
  switch (fn) {
    case PointwiseFn::Relu:
      for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > 0 ? in[i] : Real(0);
      break;
    case PointwiseFn::Sigmoid: {
      // exp(-|z|) never overflows; pick 1/(1+e) or e/(1+e) by sign.
      map_aligned(in, o, n, [](const auto& z) {
        const auto e = (-z.abs()).exp().eval();
        return (z >= Real(0)).select(Real(1) / (Real(1) + e), e / (Real(1) + e)).eval();
      });
      break;
    }
    case PointwiseFn::Tanh:
      map_aligned(in, o, n, [](const auto& z) { return z.tanh().eval(); });
      break;
    case PointwiseFn::Exp:
      map_aligned(in, o, n, [](const auto& z) { return z.exp().eval(); });
      break;
    case PointwiseFn::Log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(in[i] > 0)) throw DomainError("log of non-positive value");
        o[i] = std::log(in[i]);
      }
      break;
    case PointwiseFn::Sqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (in[i] < 0)
          throw DomainError("sqrt of negative value " + std::to_string(in[i]) +
                            " (clamp the argument first)");
        o[i] = std::sqrt(in[i]);
      }
      break;
    case PointwiseFn::Square:
      for (std::size_t i = 0; i < n; ++i) o[i] = in[i] * in[i];
      break;
  }
  return tape_of(x).record(
      std::move(out), {x},
      [fn](const Tensor<Real>& g, const Tensor<Real>& y,
           std::span<const Tensor<Real>* const> in_v,
           std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        const std::size_t n = g.numel();
        const Real* x = in_v[0]->data();
        Real* dx = dg[0]->data();
        switch (fn) {
          case PointwiseFn::Relu:
            for (std::size_t i = 0; i < n; ++i)
              if (x[i] > 0) dx[i] += g[i];
            break;
          case PointwiseFn::Sigmoid:
            for (std::size_t i = 0; i < n; ++i)
              dx[i] += g[i] * y[i] * (Real(1) - y[i]);
            break;
          case PointwiseFn::Tanh:
            for (std::size_t i = 0; i < n; ++i)
              dx[i] += g[i] * (Real(1) - y[i] * y[i]);
            break;
          case PointwiseFn::Exp:
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * y[i];
            break;
          case PointwiseFn::Log:
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] / x[i];
            break;
          case PointwiseFn::Sqrt:
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] / (Real(2) * y[i]);
            break;
          case PointwiseFn::Square:
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * Real(2) * x[i];
            break;
        }
      });
}

namespace {

enum class BinOp { Add, Sub, Mul };

template <typename Real>
Var<Real> binary(const Var<Real>& a, const Var<Real>& b, BinOp op,
                 const char* name) {
  auto plan = plan_broadcast(a.value().shape(), b.value().shape(), name);
  Tensor<Real> out(plan.out);
  const Real* av = a.value().data();
  const Real* bv = b.value().data();
  Real* o = out.data();
  for_each_broadcast_run(plan, [&](std::size_t o0, std::size_t ia, std::size_t ib,
                                   std::size_t len, std::size_t sa, std::size_t sb) {
    const Real* x = av + ia;
    const Real* y = bv + ib;
    Real* z = o + o0;
    switch (op) {
      case BinOp::Add:
        for (std::size_t j = 0; j < len; ++j) z[j] = x[j * sa] + y[j * sb];
        break;
      case BinOp::Sub:
        for (std::size_t j = 0; j < len; ++j) z[j] = x[j * sa] - y[j * sb];
        break;
      case BinOp::Mul:
        for (std::size_t j = 0; j < len; ++j) z[j] = x[j * sa] * y[j * sb];
        break;
    }
  });
  return tape_of(a).record(
      std::move(out), {a, b},
      [plan = std::move(plan), op](const Tensor<Real>& g, const Tensor<Real>&,
                                   std::span<const Tensor<Real>* const> in,
                                   std::span<Tensor<Real>* const> dg) {
        const Real* av = in[0]->data();
        const Real* bv = in[1]->data();
        Real* da = dg[0] ? dg[0]->data() : nullptr;
        Real* db = dg[1] ? dg[1]->data() : nullptr;
        const Real sign_b = op == BinOp::Sub ? Real(-1) : Real(1);
        const bool product = op == BinOp::Mul;
        for_each_broadcast_run(plan, [&](std::size_t o0, std::size_t ia,
                                         std::size_t ib, std::size_t len,
                                         std::size_t sa, std::size_t sb) {
          if (da)
            accumulate_run(da, ia, sa, g.data() + o0, product ? bv : nullptr, ib,
                           sb, len, Real(1));
          if (db)
            accumulate_run(db, ib, sb, g.data() + o0, product ? av : nullptr, ia,
                           sa, len, sign_b);
        });
      });
}

}  // namespace

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  return binary(a, b, BinOp::Add, "add");
}
template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  return binary(a, b, BinOp::Mul, "mul");
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor) {
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return tape_of(x).record(
      std::move(out), {x},
      [factor](const Tensor<Real>& g, const Tensor<Real>&,
               std::span<const Tensor<Real>* const>,
               std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*dg[0])[i] += factor * g[i];
      });
}

template <typename Real>
Var<Real> clamp_min(const Var<Real>& x, Real floor) {
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v = v < floor ? floor : v;
  return tape_of(x).record(
      std::move(out), {x},
      [floor](const Tensor<Real>& g, const Tensor<Real>&,
              std::span<const Tensor<Real>* const> in,
              std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i)
          if (!((*in[0])[i] < floor)) (*dg[0])[i] += g[i];
      });
}

template <typename Real>
Var<Real> softmax(const Var<Real>& x, std::size_t axis) {
  const auto& xv = x.value();
  const AxisSplit s = split_at_axis(xv.shape(), axis);
  Tensor<Real> out(xv.shape());
  // Shift every slice by its max, exponentiate the whole tensor at once,
  // then normalize.
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      Real mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e)
        mx = std::max(mx, xv[base + e * s.inner]);
      for (std::size_t e = 0; e < s.extent; ++e)
        out[base + e * s.inner] = xv[base + e * s.inner] - mx;
    }
  }
  map_aligned(out.data(), out.data(), out.numel(),
              [](const auto& z) { return z.exp().eval(); });
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      Real total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) total += out[base + e * s.inner];
      const Real inv = Real(1) / total;
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] *= inv;
    }
  }
  return tape_of(x).record(
      std::move(out), {x},
      [s](const Tensor<Real>& g, const Tensor<Real>& y,
          std::span<const Tensor<Real>* const>,
          std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            Real dot = 0;
            for (std::size_t e = 0; e < s.extent; ++e)
              dot += g[base + e * s.inner] * y[base + e * s.inner];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t j = base + e * s.inner;
              (*dg[0])[j] += y[j] * (g[j] - dot);
            }
          }
        }
      });
}

template <typename Real>
Var<Real> affine_norm(const Var<Real>& x, const Var<Real>& gain,
                      const Var<Real>& bias, std::size_t axis, Real eps) {
  const auto& xv = x.value();
  const AxisSplit s = split_at_axis(xv.shape(), axis);
  if (gain.value().numel() != s.extent || bias.value().numel() != s.extent)
    throw DimensionError("affine_norm: gain/bias extent must be " +
                         std::to_string(s.extent) + ", got " +
                         shape_string(gain.value().shape()) + " and " +
                         shape_string(bias.value().shape()));
  const Real* gv = gain.value().data();
  const Real* bv = bias.value().data();
  Tensor<Real> out(xv.shape());
  const Real inv_n = Real(1) / static_cast<Real>(s.extent);
  // Slice statistics for one outer block, accumulated row by row so the
  // inner loops run over contiguous memory.
  auto stats = [s, eps, inv_n](const Real* block, std::vector<Real>& mean,
                               std::vector<Real>& inv_std) {
    mean.assign(s.inner, Real(0));
    inv_std.assign(s.inner, Real(0));
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) mean[i] += block[e * s.inner + i];
    for (std::size_t i = 0; i < s.inner; ++i) mean[i] *= inv_n;
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const Real d = block[e * s.inner + i] - mean[i];
        inv_std[i] += d * d;
      }
    for (std::size_t i = 0; i < s.inner; ++i)
      inv_std[i] = Real(1) / std::sqrt(inv_std[i] * inv_n + eps);
  };
  std::vector<Real> mean, inv_std;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const Real* block = xv.data() + o * s.extent * s.inner;
    Real* dst = out.data() + o * s.extent * s.inner;
    stats(block, mean, inv_std);
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t j = e * s.inner + i;
        dst[j] = gv[e] * (block[j] - mean[i]) * inv_std[i] + bv[e];
      }
  }
  return tape_of(x).record(
      std::move(out), {x, gain, bias},
      [s, inv_n, stats](const Tensor<Real>& g, const Tensor<Real>&,
                        std::span<const Tensor<Real>* const> in,
                        std::span<Tensor<Real>* const> dg) {
        const Real* gv = in[1]->data();
        std::vector<Real> mean, inv_std, m_dxhat(s.inner), m_dxhat_xhat(s.inner);
        std::vector<Real> xhat(s.extent * s.inner);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const std::size_t off = o * s.extent * s.inner;
          const Real* block = in[0]->data() + off;
          const Real* gb = g.data() + off;
          stats(block, mean, inv_std);
          std::fill(m_dxhat.begin(), m_dxhat.end(), Real(0));
          std::fill(m_dxhat_xhat.begin(), m_dxhat_xhat.end(), Real(0));
          for (std::size_t e = 0; e < s.extent; ++e) {
            Real dgain = 0, dbias = 0;
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t j = e * s.inner + i;
              xhat[j] = (block[j] - mean[i]) * inv_std[i];
              const Real dxhat = gb[j] * gv[e];
              m_dxhat[i] += dxhat;
              m_dxhat_xhat[i] += dxhat * xhat[j];
              dgain += gb[j] * xhat[j];
              dbias += gb[j];
            }
            if (dg[1]) (*dg[1])[e] += dgain;
            if (dg[2]) (*dg[2])[e] += dbias;
          }
          if (!dg[0]) continue;
          Real* dx = dg[0]->data() + off;
          for (std::size_t i = 0; i < s.inner; ++i) {
            m_dxhat[i] *= inv_n;
            m_dxhat_xhat[i] *= inv_n;
          }
          for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t j = e * s.inner + i;
              dx[j] += inv_std[i] *
                       (gb[j] * gv[e] - m_dxhat[i] - xhat[j] * m_dxhat_xhat[i]);
            }
        }
      });
}

template <typename Real>
Var<Real> l2_normalize(const Var<Real>& x, std::size_t axis) {
  const auto& xv = x.value();
  const AxisSplit s = split_at_axis(xv.shape(), axis);
  Tensor<Real> out(xv.shape());
  std::vector<Real> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      Real ss = 0;
      for (std::size_t e = 0; e < s.extent; ++e)
        ss += xv[base + e * s.inner] * xv[base + e * s.inner];
      const Real norm = std::sqrt(ss);
      // NaN passes through so a diverged run surfaces as a non-finite loss.
      if (norm == 0) throw DomainError("l2_normalize: zero-norm vector");
      norms[o * s.inner + i] = norm;
      for (std::size_t e = 0; e < s.extent; ++e)
        out[base + e * s.inner] = xv[base + e * s.inner] / norm;
    }
  }
  return tape_of(x).record(
      std::move(out), {x},
      [s, norms = std::move(norms)](const Tensor<Real>& g, const Tensor<Real>& y,
                                    std::span<const Tensor<Real>* const>,
                                    std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            Real dot = 0;
            for (std::size_t e = 0; e < s.extent; ++e)
              dot += y[base + e * s.inner] * g[base + e * s.inner];
            const Real inv = Real(1) / norms[o * s.inner + i];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t j = base + e * s.inner;
              (*dg[0])[j] += (g[j] - y[j] * dot) * inv;
            }
          }
        }
      });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(
      std::move(out), {x},
      [](const Tensor<Real>& g, const Tensor<Real>&,
         std::span<const Tensor<Real>* const>, std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*dg[0])[i] += g[i];
      });
}

template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  const auto& xv = x.value();
  const AxisSplit s = split_at_axis(xv.shape(), axis);
  if (begin >= end || end > s.extent)
    throw DimensionError("slice [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of range for axis " +
                         std::to_string(axis) + " of " +
                         shape_string(xv.shape()));
  Shape shape = xv.shape();
  shape[axis] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  Tensor<Real> out(shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, len,
                out.data() + o * len);
  return tape_of(x).record(
      std::move(out), {x},
      [s, begin, len](const Tensor<Real>& g, const Tensor<Real>&,
                      std::span<const Tensor<Real>* const>,
                      std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
          Real* dst = dg[0]->data() + (o * s.extent + begin) * s.inner;
          const Real* src = g.data() + o * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().value().shape();
  Shape shape = first;
  std::vector<std::size_t> extents;
  split_at_axis(first, axis);  // validates axis
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.value().shape();
    bool ok = ps.size() == first.size();
    for (std::size_t i = 0; ok && i < ps.size(); ++i)
      ok = i == axis || ps[i] == first[i];
    if (!ok)
      throw DimensionError("concat: " + shape_string(ps) +
                           " incompatible with " + shape_string(first) +
                           " along axis " + std::to_string(axis));
    extents.push_back(ps[axis]);
    shape[axis] += ps[axis];
  }
  const AxisSplit s = split_at_axis(shape, axis);
  Tensor<Real> out(shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t len = extents[p] * s.inner;
    const Real* src = parts[p].value().data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src + o * len, len,
                  out.data() + (o * s.extent) * s.inner + offset * s.inner);
    offset += extents[p];
  }
  return tape_of(parts.front())
      .record(std::move(out), parts,
              [s, extents](const Tensor<Real>& g, const Tensor<Real>&,
                           std::span<const Tensor<Real>* const>,
                           std::span<Tensor<Real>* const> dg) {
                std::size_t offset = 0;
                for (std::size_t p = 0; p < extents.size(); ++p) {
                  const std::size_t len = extents[p] * s.inner;
                  if (dg[p]) {
                    for (std::size_t o = 0; o < s.outer; ++o) {
                      const Real* src =
                          g.data() + o * s.extent * s.inner + offset * s.inner;
                      Real* dst = dg[p]->data() + o * len;
                      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                    }
                  }
                  offset += extents[p];
                }
              });
}

template <typename Real>
Var<Real> sum_all(const Var<Real>& x) {
  Real total = 0;
  for (Real v : x.value().values()) total += v;
  return tape_of(x).record(
      Tensor<Real>::scalar(total), {x},
      [](const Tensor<Real>& g, const Tensor<Real>&,
         std::span<const Tensor<Real>* const>, std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (auto& v : dg[0]->storage()) v += g[0];
      });
}

template <typename Real>
std::vector<Tensor<Real>> finite_diff_grad(
    const std::function<double()>& f, std::span<Parameter<Real>* const> params,
    double h) {
  std::vector<Tensor<Real>> grads;
  grads.reserve(params.size());
  for (Parameter<Real>* p : params) {
    Tensor<Real> g(p->value.shape());
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const Real saved = p->value[i];
      p->value[i] = static_cast<Real>(saved + h);
      const double up = f();
      p->value[i] = static_cast<Real>(saved - h);
      const double down = f();
      p->value[i] = saved;
      g[i] = static_cast<Real>((up - down) / (2.0 * h));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

#define LAP_INSTANTIATE_AUTOGRAD(R)                                            \
  template class Tape<R>;                                                      \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                        \
  template ReduceResult<R> reduce(const Var<R>&, std::size_t, ReduceKind);     \
  template Var<R> pointwise(const Var<R>&, PointwiseFn);                       \
  template Var<R> add(const Var<R>&, const Var<R>&);                           \
  template Var<R> sub(const Var<R>&, const Var<R>&);                           \
  template Var<R> mul(const Var<R>&, const Var<R>&);                           \
  template Var<R> scale(const Var<R>&, R);                                     \
  template Var<R> clamp_min(const Var<R>&, R);                                 \
  template Var<R> softmax(const Var<R>&, std::size_t);                         \
  template Var<R> affine_norm(const Var<R>&, const Var<R>&, const Var<R>&,     \
                              std::size_t, R);                                 \
  template Var<R> l2_normalize(const Var<R>&, std::size_t);                    \
  template Var<R> reshape(const Var<R>&, Shape);                               \
  template Var<R> slice(const Var<R>&, std::size_t, std::size_t, std::size_t); \
  template Var<R> concat(const std::vector<Var<R>>&, std::size_t);             \
  template Var<R> sum_all(const Var<R>&);                                      \
  template std::vector<Tensor<R>> finite_diff_grad(                            \
      const std::function<double()>&, std::span<Parameter<R>* const>, double);

LAP_INSTANTIATE_AUTOGRAD(float)
LAP_INSTANTIATE_AUTOGRAD(double)

}  // namespace lap
