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

#include "lap/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lap {

void ScheduleConfig::validate() const {
  if (!(lr_min > 0) || !(lr_min <= lr_max))
    throw std::invalid_argument("learning rates need 0 < lr_min <= lr_max");
  if (!(warmup >= 0 && warmup < 1))
    throw std::invalid_argument("warmup fraction must lie in [0, 1)");
  if (total_steps == 0) throw std::invalid_argument("total_steps must be positive");
}

double one_cycle_lr(std::size_t step, const ScheduleConfig& c) {
  c.validate();
  const double total = static_cast<double>(c.total_steps);
  const double s = std::min(static_cast<double>(step), total);
  const double warm = c.warmup * total;
  if (s < warm) return c.lr_min + (c.lr_max - c.lr_min) * s / warm;
  const double span = total - warm;
  if (span <= 0) return c.lr_min;
  const double frac = (s - warm) / span;
  return c.lr_min +
         0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

bool decays(std::string_view name) {
  return name.find("norm.") == std::string_view::npos;
}

template <typename Real>
AdamState<Real> AdamState<Real>::init(std::span<Parameter<Real>* const> params,
                                      double weight_decay) {
  AdamState s;
  s.weight_decay = weight_decay;
  for (const auto* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

template <typename Real>
void adam_step(std::span<Parameter<Real>* const> params, AdamState<Real>& state,
               double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("optimizer state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const Real b1 = static_cast<Real>(state.beta1), b2 = static_cast<Real>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    auto& w = p.value.storage();
    const auto& g = p.grad.values();
    if (m.size() != w.size())
      throw DimensionError("optimizer moment for " + p.name + " has wrong shape");
    const Real shrink = decays(p.name) && state.weight_decay > 0
                            ? static_cast<Real>(1.0 - lr * state.weight_decay)
                            : Real(1);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] = static_cast<Real>(w[j] * shrink -
                               lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    p.zero_grad();
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Parameter<float>* const>, AdamState<float>&, double);
template void adam_step(std::span<Parameter<double>* const>, AdamState<double>&,
                        double);

}  // namespace lap
