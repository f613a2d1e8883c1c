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

// Adam with decoupled weight decay and the one-cycle learning-rate schedule.

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "lap/autograd.hpp"

namespace lap {

struct ScheduleConfig {
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double warmup = 0.15;  // fraction of total steps
  std::size_t total_steps = 1;

  void validate() const;
};

/// Linear lr_min -> lr_max over the warmup, cosine back to lr_min over the
/// rest. Steps past the end return lr_min.
double one_cycle_lr(std::size_t step, const ScheduleConfig& config);

/// Norm gains and biases are never decayed.
bool decays(std::string_view parameter_name);

template <typename Real>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t step = 0;
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;

  /// Zero moments shaped like `params`.
  static AdamState init(std::span<Parameter<Real>* const> params,
                        double weight_decay);
};

/// theta <- theta - lr*wd*theta (decayable params only), then the
/// bias-corrected Adam delta. Gradients are zeroed afterwards.
template <typename Real>
void adam_step(std::span<Parameter<Real>* const> params, AdamState<Real>& state,
               double lr);

}  // namespace lap
