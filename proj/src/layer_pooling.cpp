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

#include "lap/layer_pooling.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "lap/random.hpp"

namespace lap {

std::string to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::SigmoidMax: return "sigmoid-max";
    case AggregationMode::SoftmaxSum: return "softmax-sum";
    case AggregationMode::StaticSuperb: return "static-superb";
  }
  return "unknown";
}

AggregationMode parse_aggregation_mode(std::string_view text) {
  if (text == "sigmoid-max") return AggregationMode::SigmoidMax;
  if (text == "softmax-sum") return AggregationMode::SoftmaxSum;
  if (text == "static-superb") return AggregationMode::StaticSuperb;
  throw std::invalid_argument("unknown aggregation mode '" + std::string(text) +
                              "' (expected sigmoid-max, softmax-sum or "
                              "static-superb)");
}

std::size_t LapConfig::resolved_head_dim() const {
  if (head_dim) return head_dim;
  if (heads == 0 || channels % heads != 0)
    throw std::invalid_argument("head_dim must be given when channels (" +
                                std::to_string(channels) +
                                ") is not divisible by heads (" +
                                std::to_string(heads) + ")");
  return channels / heads;
}

std::size_t LapConfig::se_dim() const {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(layers) / 2.0)));
}

template <typename Real>
std::vector<Parameter<Real>*> LapParams<Real>::parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& h : heads) {
    out.push_back(&h.w_in);
    out.push_back(&h.w_sq);
    out.push_back(&h.w_ex);
  }
  if (config.mode == AggregationMode::StaticSuperb) out.push_back(&superb_weights);
  out.push_back(&w_out);
  out.push_back(&norm_gain);
  out.push_back(&norm_bias);
  return out;
}

namespace {

template <typename Real>
void check_stack(const Tensor<Real>& x, std::size_t channels,
                 std::size_t layers) {
  if (x.rank() != 3 || x.dim(0) != channels || x.dim(1) != layers)
    throw DimensionError("layer stack " + shape_string(x.shape()) +
                         " does not match expected [" +
                         std::to_string(channels) + " x " +
                         std::to_string(layers) + " x T]");
}

// Head on its projected latents, [d x N*T].
template <typename Real>
HeadOutput<Real> head_forward(const Var<Real>& latents, std::size_t layers,
                              std::size_t frames, LapHeadParams<Real>& p,
                              AggregationMode mode) {
  Tape<Real>& tape = *latents.tape();
  const std::size_t d = p.w_in.value.dim(0);
  if (p.w_sq.value.dim(1) != layers || p.w_ex.value.dim(0) != layers)
    throw DimensionError("LAP head expects " +
                         std::to_string(p.w_sq.value.dim(1)) +
                         " layers, input has " + std::to_string(layers));

  auto w_sq = tape.param(p.w_sq);
  auto w_ex = tape.param(p.w_ex);

  auto x = reshape(latents, Shape{d, layers, frames});
  auto x_max = reduce(x, 0, ReduceKind::Max).values;    // [N x T]
  auto x_mean = reduce(x, 0, ReduceKind::Mean).values;  // [N x T]
  // The SE block is shared by both statistics: run it once on [N x 2T] and
  // add the two halves.
  auto both = concat(std::vector<Var<Real>>{reshape(x_max, Shape{layers, 1, frames}),
                                            reshape(x_mean, Shape{layers, 1, frames})},
                     1);
  auto se = matmul(w_ex, relu(matmul(w_sq, reshape(both, Shape{layers, 2 * frames}))));
  auto halves = reshape(se, Shape{layers, 2, frames});
  auto pre = add(slice(halves, 1, 0, 1), slice(halves, 1, 1, 2));
  pre = reshape(pre, Shape{layers, frames});

  HeadOutput<Real> out;
  out.record.head_dim = d;
  out.record.frames = frames;
  if (mode == AggregationMode::SigmoidMax) {
    auto alpha = sigmoid(pre);
    auto scaled = mul(x, reshape(alpha, Shape{1, layers, frames}));
    auto pooled = reduce(scaled, 1, ReduceKind::Max);
    out.y = pooled.values;
    out.record.argmax.assign(pooled.argmax.begin(), pooled.argmax.end());
    out.record.alpha = alpha.value().template cast<double>();
  } else if (mode == AggregationMode::SoftmaxSum) {
    auto alpha = softmax(pre, 0);
    auto scaled = mul(x, reshape(alpha, Shape{1, layers, frames}));
    out.y = reduce(scaled, 1, ReduceKind::Sum).values;
    out.record.alpha = alpha.value().template cast<double>();
  } else {
    throw std::invalid_argument("static-superb has no LAP heads");
  }
  return out;
}

}  // namespace

template <typename Real>
HeadOutput<Real> lap_head(const Var<Real>& x, LapHeadParams<Real>& head,
                          AggregationMode mode) {
  const auto& xv = x.value();
  check_stack(xv, head.w_in.value.dim(1), head.w_sq.value.dim(1));
  auto flat = reshape(x, Shape{xv.dim(0), xv.dim(1) * xv.dim(2)});
  auto latents = matmul(x.tape()->param(head.w_in), flat);
  return head_forward(latents, xv.dim(1), xv.dim(2), head, mode);
}

template <typename Real>
Var<Real> static_superb_pool(const Var<Real>& x, const Var<Real>& weights) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || weights.value().numel() != xv.dim(1))
    throw DimensionError("static_superb_pool: weights " +
                         shape_string(weights.value().shape()) +
                         " do not match layer stack " + shape_string(xv.shape()));
  auto w = softmax(reshape(weights, Shape{xv.dim(1)}), 0);
  auto scaled = mul(x, reshape(w, Shape{1, xv.dim(1), 1}));
  return reduce(scaled, 1, ReduceKind::Sum).values;
}

template <typename Real>
PoolOutput<Real> lap_pool(const Var<Real>& x, LapParams<Real>& params) {
  const LapConfig& cfg = params.config;
  const auto& xv = x.value();
  check_stack(xv, cfg.channels, cfg.layers);
  Tape<Real>& tape = *x.tape();
  const std::size_t frames = xv.dim(2);

  PoolOutput<Real> out;
  Var<Real> features;
  if (cfg.mode == AggregationMode::StaticSuperb) {
    features = static_superb_pool(x, tape.param(params.superb_weights));
  } else {
    auto flat = reshape(x, Shape{cfg.channels, cfg.layers * frames});
    // All heads' input projections as one product, [h*d x N*T].
    std::vector<Var<Real>> w_in;
    for (auto& h : params.heads) w_in.push_back(tape.param(h.w_in));
    auto latents = matmul(w_in.size() == 1 ? w_in.front() : concat(w_in, 0), flat);
    std::vector<Var<Real>> heads;
    heads.reserve(params.heads.size());
    std::size_t row = 0;
    for (auto& h : params.heads) {
      const std::size_t d = h.w_in.value.dim(0);
      auto mine = params.heads.size() == 1 ? latents : slice(latents, 0, row, row + d);
      row += d;
      auto ho = head_forward(mine, cfg.layers, frames, h, cfg.mode);
      heads.push_back(ho.y);
      out.records.push_back(std::move(ho.record));
    }
    features = heads.size() == 1 ? heads.front() : concat(heads, 0);
  }
  auto projected = matmul(tape.param(params.w_out), features);  // [R x T]
  out.pooled = affine_norm(projected, tape.param(params.norm_gain),
                           tape.param(params.norm_bias), 0);
  return out;
}

std::vector<std::uint64_t> layer_usage(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers) {
  std::vector<std::uint64_t> counts(layers, 0);
  for (const auto& r : records) {
    if (r.argmax.empty())
      throw std::invalid_argument(
          "layer usage needs sigmoid-max records; softmax-sum sums over all "
          "layers and selects none");
    for (auto l : r.argmax) {
      if (l >= layers) throw DimensionError("argmax layer out of range");
      ++counts[l];
    }
  }
  return counts;
}

std::vector<std::vector<std::uint64_t>> layer_usage_per_frame(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers) {
  if (records.empty()) return {};
  const std::size_t frames = records.front().frames;
  std::vector<std::vector<std::uint64_t>> counts(
      layers, std::vector<std::uint64_t>(frames, 0));
  for (const auto& r : records) {
    if (r.argmax.empty())
      throw std::invalid_argument("layer usage needs sigmoid-max records");
    if (r.frames != frames)
      throw DimensionError("records cover different frame counts");
    for (std::size_t i = 0; i < r.argmax.size(); ++i)
      ++counts.at(r.argmax[i])[i % frames];
  }
  return counts;
}

std::vector<std::size_t> dominant_layer_per_frame(
    const std::vector<LayerAttentionRecord>& records, std::size_t layers) {
  const auto counts = layer_usage_per_frame(records, layers);
  if (counts.empty()) return {};
  const std::size_t frames = counts.front().size();
  std::vector<std::size_t> dom(frames, 0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t l = 1; l < layers; ++l)
      if (counts[l][t] > counts[dom[t]][t]) dom[t] = l;
  return dom;
}

void write_layer_usage_csv(std::ostream& os,
                           const std::vector<std::uint64_t>& counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  os << "layer,count,fraction\n";
  for (std::size_t l = 0; l < counts.size(); ++l) {
    const double frac = total ? static_cast<double>(counts[l]) / total : 0.0;
    os << l << ',' << counts[l] << ',' << frac << '\n';
  }
}

template <typename Real>
LapParams<Real> init_lap(const LapConfig& config, std::uint64_t seed) {
  if (config.channels == 0 || config.layers == 0 || config.out_dim == 0 ||
      (config.mode != AggregationMode::StaticSuperb && config.heads == 0))
    throw std::invalid_argument("LAP dimensions must be positive");
  if (config.layers > std::numeric_limits<std::uint16_t>::max())
    throw std::invalid_argument("too many layers");
  Rng rng(seed);
  LapParams<Real> p;
  p.config = config;
  const std::size_t n = config.layers;
  std::size_t pooled_dim = config.channels;
  if (config.mode == AggregationMode::StaticSuperb) {
    p.superb_weights = Parameter<Real>("lap.superb.w", Tensor<Real>(Shape{n}));
  } else {
    const std::size_t d = config.resolved_head_dim();
    const std::size_t gamma = config.se_dim();
    for (std::size_t i = 0; i < config.heads; ++i) {
      const std::string prefix = "lap.head" + std::to_string(i) + ".";
      LapHeadParams<Real> h;
      h.w_in = Parameter<Real>(prefix + "w_in",
                               xavier_uniform<Real>(d, config.channels, rng));
      h.w_sq = Parameter<Real>(prefix + "w_sq", xavier_uniform<Real>(gamma, n, rng));
      h.w_ex = Parameter<Real>(prefix + "w_ex", xavier_uniform<Real>(n, gamma, rng));
      p.heads.push_back(std::move(h));
    }
    pooled_dim = config.heads * d;
  }
  p.w_out = Parameter<Real>("lap.w_out",
                            xavier_uniform<Real>(config.out_dim, pooled_dim, rng));
  p.norm_gain = Parameter<Real>("lap.norm.gain",
                                Tensor<Real>(Shape{config.out_dim}, Real(1)));
  p.norm_bias = Parameter<Real>("lap.norm.bias", Tensor<Real>(Shape{config.out_dim}));
  return p;
}

#define LAP_INSTANTIATE_POOLING(R)                                            \
  template struct LapParams<R>;                                               \
  template HeadOutput<R> lap_head(const Var<R>&, LapHeadParams<R>&,           \
                                  AggregationMode);                           \
  template PoolOutput<R> lap_pool(const Var<R>&, LapParams<R>&);              \
  template Var<R> static_superb_pool(const Var<R>&, const Var<R>&);           \
  template LapParams<R> init_lap<R>(const LapConfig&, std::uint64_t);

LAP_INSTANTIATE_POOLING(float)
LAP_INSTANTIATE_POOLING(double)

}  // namespace lap
