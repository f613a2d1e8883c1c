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

// Speaker backend: layer pooling -> attentive statistics pooling over time ->
// affine embedding projection with learnable standardization.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lap/autograd.hpp"
#include "lap/layer_pooling.hpp"

namespace lap {

struct BackendConfig {
  LapConfig lap;
  std::size_t bottleneck = 128;  // ASTP attention width
  std::size_t embed_dim = 192;

  static BackendConfig base();   // C=768, N=13, h=12
  static BackendConfig large();  // C=1024, N=25, h=16
  /// Desk-scale setting: C=32, N=8, h=4, d=8, R=64, B=32, embedding 32.
  static BackendConfig toy();
};

template <typename Real>
struct AstpParams {
  Parameter<Real> w1;         // [B x 3C]
  Parameter<Real> b1;         // [B]
  Parameter<Real> w2;         // [C x B]
  Parameter<Real> b2;         // [C]
  Parameter<Real> w_emb;      // [E x 2C]
  Parameter<Real> b_emb;      // [E]
  Parameter<Real> emb_gain;   // [E]
  Parameter<Real> emb_bias;   // [E]

  std::vector<Parameter<Real>*> parameters();
};

template <typename Real>
struct SpeakerBackendParams {
  BackendConfig config;
  LapParams<Real> lap;
  AstpParams<Real> astp;

  std::vector<Parameter<Real>*> parameters();
};

template <typename Real>
SpeakerBackendParams<Real> init_backend(const BackendConfig& config,
                                        std::uint64_t seed);

struct SpeakerEmbedding {
  std::string utt_id;
  std::size_t num_frames = 0;
  std::vector<double> values;
};

/// Frame weights per channel, softmax over time of
/// W2 tanh(W1 [x_t; mean; std] + b1) + b2. x is [C x T].
template <typename Real>
Var<Real> astp_attention(const Var<Real>& x, AstpParams<Real>& p);

/// concat(weighted mean, weighted std) -> [2C]; the variance is clamped at
/// kVarianceFloor before the square root.
template <typename Real>
Var<Real> astp_pool(const Var<Real>& x, const Var<Real>& alpha);

inline constexpr double kVarianceFloor = 1e-8;

template <typename Real>
struct EmbeddingForward {
  Var<Real> embedding;  // [E]
  std::vector<LayerAttentionRecord> records;
};

/// Full backend on a recorded tape; use this for training.
template <typename Real>
EmbeddingForward<Real> embed_forward(Tape<Real>& tape,
                                     const LayerStack<Real>& stack,
                                     SpeakerBackendParams<Real>& params);

template <typename Real>
SpeakerEmbedding extract_embedding(const LayerStack<Real>& stack,
                                   SpeakerBackendParams<Real>& params);

/// One embedding per stack, in input order. With `parallel` the utterances
/// are spread over OpenMP workers; results do not depend on the split.
template <typename Real>
std::vector<SpeakerEmbedding> extract_embeddings(
    const std::vector<LayerStack<Real>>& stacks,
    SpeakerBackendParams<Real>& params, bool parallel = true);

/// Exact number of learnable scalars in LAP + ASTP + embedding head
/// (classifier excluded):
///
///   heads  : h * (d*C + 2*gamma*N),  gamma = max(1, round(N/2))
///   W_out  : R * h*d   (static-superb: R*C + N)
///   norm   : 2R
///   ASTP   : B*3R + B + R*B + R
///   embed  : E*2R + E + 2E
std::size_t count_parameters(const BackendConfig& config);

/// `utt_id<TAB>num_frames<TAB>v0,v1,...` with 9 significant digits.
void write_embeddings_tsv(std::ostream& os,
                          const std::vector<SpeakerEmbedding>& embeddings);
std::vector<SpeakerEmbedding> read_embeddings_tsv(std::istream& is);

}  // namespace lap
