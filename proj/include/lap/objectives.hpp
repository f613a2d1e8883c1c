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

// Sub-center additive angular margin softmax with an Inter-TopK penalty on
// the hardest non-target classes.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lap/autograd.hpp"

namespace lap {

/// K prototype rows per speaker, stored [S*K x E] (speaker-major).
template <typename Real>
struct ClassifierHead {
  std::size_t speakers = 0;
  std::size_t subcenters = 0;
  Parameter<Real> weights;

  static ClassifierHead init(std::size_t speakers, std::size_t subcenters,
                             std::size_t embed_dim, std::uint64_t seed);
};

struct LossConfig {
  double scale = 30.0;
  double margin = 0.0;   // additive angle on the target
  std::size_t topk = 5;  // non-targets that receive the penalty
  double penalty = 0.0;  // angle removed from penalized non-targets

  void validate() const;
};

/// cos[s] = max_k cos(e, W[s, k]). Zero embedding raises DomainError.
template <typename Real>
Var<Real> subcenter_cosines(const Var<Real>& embedding,
                            ClassifierHead<Real>& head);

/// The min(topk, S-1) non-target classes with the highest cosine (ties to
/// the lower index). Every misclassified class (cos above the target's)
/// ranks ahead of the rest, so those are always included first.
std::vector<std::size_t> intertopk_selection(const std::vector<double>& cosines,
                                             std::size_t label,
                                             std::size_t topk);

/// Scaled logits: s*cos(theta_y + m) for the target, s*cos(theta_j - m') for
/// the selected non-targets, s*cos_j otherwise. When theta_y + m > pi the
/// target falls back to s*(cos theta_y - m sin m). Cosines beyond 1 + 1e-6
/// in magnitude raise DomainError; smaller excursions are clamped.
template <typename Real>
Var<Real> aam_intertopk_logits(const Var<Real>& cosines, std::size_t label,
                               const LossConfig& config);

/// -log softmax(logits)[label], max-subtracted.
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::size_t label);

enum class TrainingStage { Main, LargeMargin };

struct MarginSchedule {
  double margin_max = 0.3;
  double penalty_max = 0.06;
  double ramp_start = 0.01;  // margin at epoch 1
  std::size_t ramp_epochs = 20;
  double large_margin = 0.5;
};

/// (margin, penalty) for an epoch. Main stage: 0 at epoch 0, geometric from
/// ramp_start to margin_max over epochs 1..ramp_epochs, flat afterwards; the
/// penalty tracks penalty_max * m / margin_max. Large-margin stage:
/// (large_margin, 0).
std::pair<double, double> margin_at(std::size_t epoch, TrainingStage stage,
                                    const MarginSchedule& schedule = {});

}  // namespace lap
