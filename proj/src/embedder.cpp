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

#include "lap/embedder.hpp"

#include <charconv>
#include <exception>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "lap/random.hpp"

namespace lap {

BackendConfig BackendConfig::base() {
  BackendConfig c;
  c.lap.channels = 768;
  c.lap.layers = 13;
  c.lap.heads = 12;
  c.lap.head_dim = 64;
  return c;
}

BackendConfig BackendConfig::large() {
  BackendConfig c;
  c.lap.channels = 1024;
  c.lap.layers = 25;
  c.lap.heads = 16;
  c.lap.head_dim = 64;
  return c;
}

BackendConfig BackendConfig::toy() {
  BackendConfig c;
  c.lap.channels = 32;
  c.lap.layers = 8;
  c.lap.heads = 4;
  c.lap.head_dim = 8;
  c.lap.out_dim = 64;
  c.bottleneck = 32;
  c.embed_dim = 32;
  return c;
}

template <typename Real>
std::vector<Parameter<Real>*> AstpParams<Real>::parameters() {
  return {&w1, &b1, &w2, &b2, &w_emb, &b_emb, &emb_gain, &emb_bias};
}

template <typename Real>
std::vector<Parameter<Real>*> SpeakerBackendParams<Real>::parameters() {
  auto out = lap.parameters();
  for (auto* p : astp.parameters()) out.push_back(p);
  return out;
}

template <typename Real>
SpeakerBackendParams<Real> init_backend(const BackendConfig& config,
                                        std::uint64_t seed) {
  if (config.bottleneck == 0 || config.embed_dim == 0)
    throw std::invalid_argument("ASTP dimensions must be positive");
  SpeakerBackendParams<Real> p;
  p.config = config;
  p.lap = init_lap<Real>(config.lap, derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  const std::size_t c = config.lap.out_dim, b = config.bottleneck,
                    e = config.embed_dim;
  auto& a = p.astp;
  a.w1 = Parameter<Real>("astp.w1", xavier_uniform<Real>(b, 3 * c, rng));
  a.b1 = Parameter<Real>("astp.b1", Tensor<Real>(Shape{b}));
  a.w2 = Parameter<Real>("astp.w2", xavier_uniform<Real>(c, b, rng));
  a.b2 = Parameter<Real>("astp.b2", Tensor<Real>(Shape{c}));
  a.w_emb = Parameter<Real>("emb.w", xavier_uniform<Real>(e, 2 * c, rng));
  a.b_emb = Parameter<Real>("emb.b", Tensor<Real>(Shape{e}));
  a.emb_gain = Parameter<Real>("emb.norm.gain", Tensor<Real>(Shape{e}, Real(1)));
  a.emb_bias = Parameter<Real>("emb.norm.bias", Tensor<Real>(Shape{e}));
  return p;
}

template <typename Real>
Var<Real> astp_attention(const Var<Real>& x, AstpParams<Real>& p) {
  const auto& xv = x.value();
  const std::size_t c = p.w2.value.dim(0), b = p.w1.value.dim(0);
  if (xv.rank() != 2 || xv.dim(0) != c)
    throw DimensionError("ASTP expects [" + std::to_string(c) + " x T], got " +
                         shape_string(xv.shape()));
  Tape<Real>& tape = *x.tape();
  const Real floor = static_cast<Real>(kVarianceFloor);

  auto mean = reshape(reduce(x, 1, ReduceKind::Mean).values, Shape{c, 1});
  auto mean_sq = reshape(reduce(square(x), 1, ReduceKind::Mean).values, Shape{c, 1});
  auto std_dev = sqrt(clamp_min(sub(mean_sq, square(mean)), floor));

  // W1 [x_t; mean; std] = W1[:, :C] x_t + (W1[:, C:2C] mean + W1[:, 2C:] std),
  // the bracketed term being shared by every frame.
  auto w1 = tape.param(p.w1);
  auto frame_part = matmul(slice(w1, 1, 0, c), x);
  auto global_part = add(add(matmul(slice(w1, 1, c, 2 * c), mean),
                             matmul(slice(w1, 1, 2 * c, 3 * c), std_dev)),
                         reshape(tape.param(p.b1), Shape{b, 1}));
  auto hidden = tanh(add(frame_part, global_part));
  auto logits = add(matmul(tape.param(p.w2), hidden),
                    reshape(tape.param(p.b2), Shape{c, 1}));
  return softmax(logits, 1);
}

template <typename Real>
Var<Real> astp_pool(const Var<Real>& x, const Var<Real>& alpha) {
  if (x.value().shape() != alpha.value().shape() || x.value().rank() != 2)
    throw DimensionError("astp_pool: x " + shape_string(x.value().shape()) +
                         " and alpha " + shape_string(alpha.value().shape()) +
                         " must both be [C x T]");
  const Real floor = static_cast<Real>(kVarianceFloor);
  auto mu = reduce(mul(alpha, x), 1, ReduceKind::Sum).values;
  auto second = reduce(mul(alpha, square(x)), 1, ReduceKind::Sum).values;
  auto sigma = sqrt(clamp_min(sub(second, square(mu)), floor));
  return concat(std::vector<Var<Real>>{mu, sigma}, 0);
}

template <typename Real>
EmbeddingForward<Real> embed_forward(Tape<Real>& tape,
                                     const LayerStack<Real>& stack,
                                     SpeakerBackendParams<Real>& params) {
  auto x = tape.constant(stack.features);
  auto pooled = lap_pool(x, params.lap);
  auto alpha = astp_attention(pooled.pooled, params.astp);
  auto stats = astp_pool(pooled.pooled, alpha);

  auto& a = params.astp;
  const std::size_t two_c = stats.value().numel();
  const std::size_t e = a.w_emb.value.dim(0);
  auto projected = add(reshape(matmul(tape.param(a.w_emb),
                                      reshape(stats, Shape{two_c, 1})),
                               Shape{e}),
                       tape.param(a.b_emb));
  EmbeddingForward<Real> out;
  out.embedding = affine_norm(projected, tape.param(a.emb_gain),
                              tape.param(a.emb_bias), 0);
  out.records = std::move(pooled.records);
  return out;
}

template <typename Real>
SpeakerEmbedding extract_embedding(const LayerStack<Real>& stack,
                                   SpeakerBackendParams<Real>& params) {
  Tape<Real> tape;
  auto fwd = embed_forward(tape, stack, params);
  SpeakerEmbedding emb;
  emb.utt_id = stack.utt_id;
  emb.num_frames = stack.frames();
  const auto& v = fwd.embedding.value();
  emb.values.assign(v.values().begin(), v.values().end());
  return emb;
}

template <typename Real>
std::vector<SpeakerEmbedding> extract_embeddings(
    const std::vector<LayerStack<Real>>& stacks,
    SpeakerBackendParams<Real>& params, bool parallel) {
  std::vector<SpeakerEmbedding> out(stacks.size());
  std::vector<std::exception_ptr> errors(stacks.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(stacks.size()); ++i) {
    try {
      out[i] = extract_embedding(stacks[i], params);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::size_t count_parameters(const BackendConfig& config) {
  const LapConfig& l = config.lap;
  const std::size_t r = l.out_dim, b = config.bottleneck, e = config.embed_dim;
  std::size_t lap = 2 * r;
  if (l.mode == AggregationMode::StaticSuperb) {
    lap += r * l.channels + l.layers;
  } else {
    const std::size_t d = l.resolved_head_dim();
    const std::size_t gamma = l.se_dim();
    lap += l.heads * (d * l.channels + 2 * gamma * l.layers);
    lap += r * l.heads * d;
  }
  const std::size_t astp = b * 3 * r + b + r * b + r;
  const std::size_t embed = e * 2 * r + e + 2 * e;
  return lap + astp + embed;
}

void write_embeddings_tsv(std::ostream& os,
                          const std::vector<SpeakerEmbedding>& embeddings) {
  char buf[32];
  for (const auto& e : embeddings) {
    os << e.utt_id << '\t' << e.num_frames << '\t';
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", e.values[i]);
      if (i) os << ',';
      os << buf;
    }
    os << '\n';
  }
}

std::vector<SpeakerEmbedding> read_embeddings_tsv(std::istream& is) {
  std::vector<SpeakerEmbedding> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": expected 3 tab-separated fields");
    SpeakerEmbedding e;
    e.utt_id = line.substr(0, t1);
    e.num_frames = std::stoul(line.substr(t1 + 1, t2 - t1 - 1));
    std::stringstream vals(line.substr(t2 + 1));
    std::string tok;
    while (std::getline(vals, tok, ',')) {
      double v = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                                 ": bad value '" + tok + "'");
      e.values.push_back(v);
    }
    if (e.values.empty())
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": empty vector");
    out.push_back(std::move(e));
  }
  return out;
}

#define LAP_INSTANTIATE_EMBEDDER(R)                                            \
  template struct AstpParams<R>;                                               \
  template struct SpeakerBackendParams<R>;                                     \
  template SpeakerBackendParams<R> init_backend<R>(const BackendConfig&,       \
                                                   std::uint64_t);             \
  template Var<R> astp_attention(const Var<R>&, AstpParams<R>&);               \
  template Var<R> astp_pool(const Var<R>&, const Var<R>&);                     \
  template EmbeddingForward<R> embed_forward(Tape<R>&, const LayerStack<R>&,   \
                                             SpeakerBackendParams<R>&);        \
  template SpeakerEmbedding extract_embedding(const LayerStack<R>&,            \
                                              SpeakerBackendParams<R>&);       \
  template std::vector<SpeakerEmbedding> extract_embeddings(                   \
      const std::vector<LayerStack<R>>&, SpeakerBackendParams<R>&, bool);

LAP_INSTANTIATE_EMBEDDER(float)
LAP_INSTANTIATE_EMBEDDER(double)

}  // namespace lap
