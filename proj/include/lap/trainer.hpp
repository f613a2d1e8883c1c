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

// Speaker-classification training of the backend: main stage with the margin
// ramp, then optional large-margin epochs.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "lap/checkpoint.hpp"
#include "lap/config.hpp"
#include "lap/embedder.hpp"
#include "lap/objectives.hpp"
#include "lap/optim.hpp"

namespace lap {

struct TrainConfig {
  BackendConfig backend = BackendConfig::toy();
  std::size_t speakers = 0;
  std::size_t subcenters = 3;
  double scale = 30.0;
  std::size_t topk = 5;
  MarginSchedule margins;
  std::size_t epochs = 100;
  std::size_t large_margin_epochs = 0;
  std::size_t batch_size = 64;
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double warmup = 0.15;
  double weight_decay = 5e-5;
  double large_margin_weight_decay = 1e-5;
  int precision = 32;
  std::uint64_t seed = 0;

  void validate() const;
  /// `key = value` text of everything that fixes parameter shapes.
  std::string model_text() const;
  std::uint64_t model_hash() const;
};

/// Reads the training-related keys; `speakers` is left at 0 for the caller.
TrainConfig train_config_from(const RunConfig& rc);
/// Backend shape from a checkpoint's model text.
TrainConfig model_config_from_text(const std::string& text);

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed
  double lr = 0;         // last learning rate used
  double margin = 0;
  double loss = 0;  // mean over the epoch's utterances
  double acc = 0;   // top-1 on raw sub-center cosines
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

template <typename Real>
struct TrainingSet {
  std::vector<LayerStack<Real>> stacks;
  std::vector<std::size_t> labels;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t step, double lr, double margin);
  std::size_t step;
  double lr;
  double margin;
};

template <typename Real>
class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, const Checkpoint& ckpt);

  std::size_t steps_per_epoch(std::size_t utterances) const;
  std::size_t total_epochs() const {
    return config_.epochs + config_.large_margin_epochs;
  }
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  bool finished() const { return epoch_ >= total_epochs(); }

  /// Runs the next epoch. Throws NonFiniteLoss before touching the
  /// parameters if a batch loss is not finite.
  MetricsRow run_epoch(const TrainingSet<Real>& data);

  Checkpoint checkpoint();

  const TrainConfig& config() const { return config_; }
  SpeakerBackendParams<Real>& backend() { return backend_; }
  ClassifierHead<Real>& head() { return head_; }
  const AdamState<Real>& optimizer() const { return adam_; }
  std::vector<Parameter<Real>*> parameters();

 private:
  TrainConfig config_;
  SpeakerBackendParams<Real> backend_;
  ClassifierHead<Real> head_;
  AdamState<Real> adam_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
};

/// Backend weights stored in a checkpoint, at the checkpoint's precision.
template <typename Real>
SpeakerBackendParams<Real> backend_from_checkpoint(const Checkpoint& ckpt);

}  // namespace lap
