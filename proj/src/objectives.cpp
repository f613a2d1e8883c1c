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

#include "lap/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "lap/random.hpp"

namespace lap {

template <typename Real>
ClassifierHead<Real> ClassifierHead<Real>::init(std::size_t speakers,
                                                std::size_t subcenters,
                                                std::size_t embed_dim,
                                                std::uint64_t seed) {
  if (!speakers || !subcenters || !embed_dim)
    throw std::invalid_argument("classifier dimensions must be positive");
  Rng rng(seed);
  ClassifierHead h;
  h.speakers = speakers;
  h.subcenters = subcenters;
  h.weights = Parameter<Real>(
      "head.w", xavier_uniform<Real>(speakers * subcenters, embed_dim, rng));
  return h;
}

void LossConfig::validate() const {
  if (!(scale > 0)) throw std::invalid_argument("loss scale must be positive");
  if (margin < 0 || margin >= std::numbers::pi / 2)
    throw std::invalid_argument("margin must lie in [0, pi/2)");
  if (penalty < 0) throw std::invalid_argument("penalty must be non-negative");
}

template <typename Real>
Var<Real> subcenter_cosines(const Var<Real>& embedding,
                            ClassifierHead<Real>& head) {
  Tape<Real>& tape = *embedding.tape();
  const std::size_t e = embedding.value().numel();
  auto unit = l2_normalize(reshape(embedding, Shape{e, 1}), 0);
  auto rows = l2_normalize(tape.param(head.weights), 1);
  auto cos = matmul(rows, unit);  // [S*K x 1]
  return reduce(reshape(cos, Shape{head.speakers, head.subcenters}), 1,
                ReduceKind::Max)
      .values;
}

std::vector<std::size_t> intertopk_selection(const std::vector<double>& cosines,
                                             std::size_t label,
                                             std::size_t topk) {
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < cosines.size(); ++j)
    if (j != label) others.push_back(j);
  const std::size_t k = std::min(topk, others.size());
  std::partial_sort(others.begin(), others.begin() + k, others.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (cosines[a] != cosines[b]) return cosines[a] > cosines[b];
                      return a < b;
                    });
  others.resize(k);
  std::sort(others.begin(), others.end());
  return others;
}

template <typename Real>
Var<Real> aam_intertopk_logits(const Var<Real>& cosines, std::size_t label,
                               const LossConfig& config) {
  config.validate();
  const auto& cv = cosines.value();
  const std::size_t s = cv.numel();
  if (label >= s)
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(s) + " classes");
  std::vector<double> c(s);
  for (std::size_t j = 0; j < s; ++j) {
    const double v = cv[j];
    if (std::abs(v) > 1.0 + 1e-6)
      throw DomainError("cosine " + std::to_string(v) + " outside [-1, 1]");
    c[j] = std::clamp(v, -1.0, 1.0);
  }

  // Per-class angle shift: +m on the target, -m' on the penalized set.
  std::vector<double> shift(s, 0.0);
  shift[label] = config.margin;
  if (config.penalty > 0)
    for (auto j : intertopk_selection(c, label, config.topk))
      shift[j] = -config.penalty;

  Tensor<Real> out(Shape{s});
  std::vector<double> slope(s, 1.0);
  for (std::size_t j = 0; j < s; ++j) {
    const double d = shift[j];
    double value = c[j];
    if (d != 0.0) {
      const double theta = std::acos(c[j]);
      if (theta + d > std::numbers::pi) {
        value = c[j] - d * std::sin(d);
      } else {
        value = std::cos(theta + d);
        // d/dc cos(acos(c) + d) = cos d + sin d * c / sqrt(1 - c^2)
        const double sin_theta = std::sqrt(std::max(1.0 - c[j] * c[j], 1e-12));
        slope[j] = std::cos(d) + std::sin(d) * c[j] / sin_theta;
      }
    }
    out[j] = static_cast<Real>(config.scale * value);
    slope[j] *= config.scale;
  }
  return cosines.tape()->record(
      std::move(out), {cosines},
      [slope = std::move(slope)](const Tensor<Real>& g, const Tensor<Real>&,
                                 std::span<const Tensor<Real>* const>,
                                 std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t j = 0; j < g.numel(); ++j)
          (*dg[0])[j] += static_cast<Real>(slope[j]) * g[j];
      });
}

template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::size_t label) {
  const auto& z = logits.value();
  const std::size_t s = z.numel();
  if (label >= s) throw std::out_of_range("label out of range");
  Real mx = z[0];
  for (std::size_t j = 1; j < s; ++j) mx = std::max(mx, z[j]);
  std::vector<Real> prob(s);
  Real total = 0;
  for (std::size_t j = 0; j < s; ++j) {
    prob[j] = std::exp(z[j] - mx);
    total += prob[j];
  }
  for (auto& p : prob) p /= total;
  const Real loss = std::log(total) + mx - z[label];
  return logits.tape()->record(
      Tensor<Real>::scalar(loss), {logits},
      [prob = std::move(prob), label](const Tensor<Real>& g, const Tensor<Real>&,
                                      std::span<const Tensor<Real>* const>,
                                      std::span<Tensor<Real>* const> dg) {
        if (!dg[0]) return;
        for (std::size_t j = 0; j < prob.size(); ++j)
          (*dg[0])[j] += g[0] * (prob[j] - (j == label ? Real(1) : Real(0)));
      });
}

std::pair<double, double> margin_at(std::size_t epoch, TrainingStage stage,
                                    const MarginSchedule& sch) {
  if (stage == TrainingStage::LargeMargin) return {sch.large_margin, 0.0};
  double m = 0.0;
  if (epoch == 0) {
    m = 0.0;
  } else if (epoch >= sch.ramp_epochs || sch.ramp_epochs <= 1) {
    m = sch.margin_max;
  } else {
    const double frac = static_cast<double>(epoch - 1) /
                        static_cast<double>(sch.ramp_epochs - 1);
    m = sch.ramp_start * std::pow(sch.margin_max / sch.ramp_start, frac);
  }
  const double penalty = sch.margin_max > 0 ? sch.penalty_max * m / sch.margin_max : 0.0;
  return {m, penalty};
}

#define LAP_INSTANTIATE_OBJECTIVES(R)                                          \
  template struct ClassifierHead<R>;                                           \
  template Var<R> subcenter_cosines(const Var<R>&, ClassifierHead<R>&);        \
  template Var<R> aam_intertopk_logits(const Var<R>&, std::size_t,             \
                                       const LossConfig&);                     \
  template Var<R> cross_entropy(const Var<R>&, std::size_t);

LAP_INSTANTIATE_OBJECTIVES(float)
LAP_INSTANTIATE_OBJECTIVES(double)

}  // namespace lap
