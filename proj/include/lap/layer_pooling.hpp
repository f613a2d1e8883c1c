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

// Layer attentive pooling over a stack of hidden states.
//
// Each head projects every layer/frame with W_in, summarises the projected
// vector by its max and mean over the latent axis, turns those per-layer
// statistics into layer weights with a bias-free squeeze-excitation block
// shared between the two statistics, and then pools the weighted latents
// across layers:
//
//   sigmoid-max : alpha = sigmoid(SE(x_max) + SE(x_mean)), y = max_layers(alpha * x)
//   softmax-sum : alpha = softmax_layers(same pre-activation), y = sum_layers(alpha * x)
//
// Heads are concatenated, projected by W_out and standardized per frame.
// The static-superb mode replaces the heads by one time-static softmax
// weight per layer.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "lap/autograd.hpp"
#include "lap/tensor.hpp"

namespace lap {

enum class AggregationMode { SigmoidMax, SoftmaxSum, StaticSuperb };

std::string to_string(AggregationMode mode);
/// Accepts "sigmoid-max", "softmax-sum", "static-superb".
AggregationMode parse_aggregation_mode(std::string_view text);

/// All hidden states of one utterance, features shaped [C x N x T].
template <typename Real>
struct LayerStack {
  std::string utt_id;
  Tensor<Real> features;

  std::size_t channels() const { return features.dim(0); }
  std::size_t layers() const { return features.dim(1); }
  std::size_t frames() const { return features.dim(2); }
};

struct LapConfig {
  std::size_t channels = 768;
  std::size_t layers = 13;  // hidden states including the conv output
  std::size_t heads = 12;
  std::size_t head_dim = 0;  // 0: channels / heads
  std::size_t out_dim = 512;
  AggregationMode mode = AggregationMode::SigmoidMax;

  std::size_t resolved_head_dim() const;
  /// SE bottleneck width, max(1, round(layers / 2)).
  std::size_t se_dim() const;
};

template <typename Real>
struct LapHeadParams {
  Parameter<Real> w_in;  // [d x C]
  Parameter<Real> w_sq;  // [gamma x N]
  Parameter<Real> w_ex;  // [N x gamma]
};

template <typename Real>
struct LapParams {
  LapConfig config;
  std::vector<LapHeadParams<Real>> heads;  // empty in static-superb mode
  Parameter<Real> w_out;                   // [R x h*d] or [R x C] (superb)
  Parameter<Real> norm_gain;               // [R]
  Parameter<Real> norm_bias;               // [R]
  Parameter<Real> superb_weights;          // [N], static-superb only

  std::vector<Parameter<Real>*> parameters();
};

/// Layer weights of one head over an utterance. `argmax` holds, for every
/// (latent, frame) position in row-major [d x T] order, the layer chosen by
/// the max pool; it is empty for softmax-sum.
struct LayerAttentionRecord {
  Tensor<double> alpha;  // [N x T]
  std::vector<std::uint16_t> argmax;
  std::size_t head_dim = 0;
  std::size_t frames = 0;
};

template <typename Real>
struct HeadOutput {
  Var<Real> y;  // [d x T]
  LayerAttentionRecord record;
};

template <typename Real>
struct PoolOutput {
  Var<Real> pooled;  // [R x T]
  std::vector<LayerAttentionRecord> records;
};

/// One head applied to X ([C x N x T]).
template <typename Real>
HeadOutput<Real> lap_head(const Var<Real>& x, LapHeadParams<Real>& head,
                          AggregationMode mode);

template <typename Real>
PoolOutput<Real> lap_pool(const Var<Real>& x, LapParams<Real>& params);

/// sum_l softmax(w)[l] * X[:, l, :] -> [C x T]
template <typename Real>
Var<Real> static_superb_pool(const Var<Real>& x, const Var<Real>& weights);

/// Per-layer count of (head, latent, frame) positions whose max pool picked
/// that layer. Throws std::invalid_argument for records without selections.
std::vector<std::uint64_t> layer_usage(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers);

/// For every frame, the layer selected most often across heads and latents
/// (ties to the lowest layer).
std::vector<std::size_t> dominant_layer_per_frame(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers);

/// Per-frame [N x T] selection counts, summed over heads and latents.
std::vector<std::vector<std::uint64_t>> layer_usage_per_frame(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers);

/// CSV with header `layer,count,fraction`.
void write_layer_usage_csv(std::ostream& os,
                           const std::vector<std::uint64_t>& counts);

template <typename Real>
LapParams<Real> init_lap(const LapConfig& config, std::uint64_t seed);

}  // namespace lap
