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


#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lap/embedder.hpp"
#include "lap/random.hpp"

namespace lap {
namespace {

using T = Tensor<double>;

T randn(Shape s, Rng& rng) {
  T t(std::move(s));
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

BackendConfig tiny(AggregationMode mode = AggregationMode::SigmoidMax) {
  BackendConfig c;
  c.lap.channels = 6;
  c.lap.layers = 4;
  c.lap.heads = 2;
  c.lap.head_dim = 3;
  c.lap.out_dim = 5;
  c.lap.mode = mode;
  c.bottleneck = 4;
  c.embed_dim = 7;
  return c;
}

TEST(AstpAttention, SingleFrameIsOne) {
  auto b = init_backend<double>(tiny(), 1);
  Rng rng(2);
  Tape<double> tape;
  auto a = astp_attention(tape.constant(randn({5, 1}, rng)), b.astp).value();
  for (double v : a.storage()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(AstpAttention, ConstantInputIsUniform) {
  auto b = init_backend<double>(tiny(), 1);
  T x(Shape{5, 6});
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t t = 0; t < 6; ++t) x.at(c, t) = 0.3 * c - 0.4;
  Tape<double> tape;
  auto a = astp_attention(tape.constant(x), b.astp).value();
  for (double v : a.storage()) EXPECT_NEAR(v, 1.0 / 6, 1e-15);
}

TEST(AstpAttention, MatchesDirectEvaluation) {
  auto b = init_backend<double>(tiny(), 3);
  Rng rng(4);
  auto& p = b.astp;
  for (auto& v : p.b1.value.storage()) v = rng.normal();
  for (auto& v : p.b2.value.storage()) v = rng.normal();
  const std::size_t c = 5, t = 6, bn = 4;
  const T x = randn({c, t}, rng);
  Tape<double> tape;
  auto a = astp_attention(tape.constant(x), p).value();
  std::vector<double> mean(c, 0), sd(c, 0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t f = 0; f < t; ++f) mean[i] += x.at(i, f) / t;
    for (std::size_t f = 0; f < t; ++f) sd[i] += (x.at(i, f) - mean[i]) * (x.at(i, f) - mean[i]) / t;
    sd[i] = std::sqrt(sd[i]);
  }
  std::vector<double> logits(c * t);
  for (std::size_t f = 0; f < t; ++f) {
    std::vector<double> hidden(bn);
    for (std::size_t j = 0; j < bn; ++j) {
      double s = p.b1.value[j];
      for (std::size_t i = 0; i < c; ++i)
        s += p.w1.value.at(j, i) * x.at(i, f) + p.w1.value.at(j, c + i) * mean[i] +
             p.w1.value.at(j, 2 * c + i) * sd[i];
      hidden[j] = std::tanh(s);
    }
    for (std::size_t i = 0; i < c; ++i) {
      double s = p.b2.value[i];
      for (std::size_t j = 0; j < bn; ++j) s += p.w2.value.at(i, j) * hidden[j];
      logits[i * t + f] = s;
    }
  }
  for (std::size_t i = 0; i < c; ++i) {
    double z = 0;
    for (std::size_t f = 0; f < t; ++f) z += std::exp(logits[i * t + f]);
    for (std::size_t f = 0; f < t; ++f)
      EXPECT_NEAR(a.at(i, f), std::exp(logits[i * t + f]) / z, 1e-10);
  }
}

TEST(AstpPool, HandCases) {
  Tape<double> tape;
  auto two = astp_pool(tape.constant(T::matrix({{0, 2}})),
                       tape.constant(T::matrix({{0.5, 0.5}})));
  EXPECT_DOUBLE_EQ(two.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(two.value()[1], 1.0);
  auto flat = astp_pool(tape.constant(T::matrix({{3, 3, 3}})),
                        tape.constant(T::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}})));
  EXPECT_NEAR(flat.value()[0], 3.0, 1e-15);
  EXPECT_NEAR(flat.value()[1], 1e-4, 1e-12);  // clamped variance
  EXPECT_THROW(astp_pool(tape.constant(T(Shape{2, 3})), tape.constant(T(Shape{3, 2}))),
               DimensionError);
}

TEST(Embedding, BaseConfigHasLength192) {
  auto b = init_backend<float>(BackendConfig::base(), 1);
  Rng rng(2);
  LayerStack<float> s{"u", Tensor<float>(Shape{768, 13, 12})};
  for (auto& v : s.features.storage()) v = static_cast<float>(rng.normal());
  EXPECT_EQ(extract_embedding(s, b).values.size(), 192u);
}

TEST(Embedding, IdenticalInputsGiveIdenticalEmbeddings) {
  auto b = init_backend<double>(tiny(), 5);
  Rng rng(6);
  LayerStack<double> s{"u", randn({6, 4, 9}, rng)};
  LayerStack<double> copy = s;
  copy.utt_id = "v";
  EXPECT_EQ(extract_embedding(s, b).values, extract_embedding(copy, b).values);
}

TEST(Embedding, FramePermutationInvariant) {
  for (auto mode : {AggregationMode::SigmoidMax, AggregationMode::SoftmaxSum,
                    AggregationMode::StaticSuperb}) {
    auto b = init_backend<double>(tiny(mode), 7);
    Rng rng(8);
    LayerStack<double> s{"u", randn({6, 4, 9}, rng)};
    LayerStack<double> p{"p", T(Shape{6, 4, 9})};
    const std::size_t perm[9] = {4, 0, 8, 2, 7, 1, 3, 6, 5};
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t t = 0; t < 9; ++t) p.features.at(c, l, t) = s.features.at(c, l, perm[t]);
    const auto a = extract_embedding(s, b).values, q = extract_embedding(p, b).values;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], q[i], 1e-12);
  }
}

TEST(Embedding, ParallelMatchesSerial) {
  auto b = init_backend<float>(BackendConfig::toy(), 9);
  Rng rng(10);
  std::vector<LayerStack<float>> stacks;
  for (std::size_t i = 0; i < 12; ++i) {
    LayerStack<float> s{"u" + std::to_string(i), Tensor<float>(Shape{32, 8, 20 + i})};
    for (auto& v : s.features.storage()) v = static_cast<float>(rng.normal());
    stacks.push_back(std::move(s));
  }
  const auto par = extract_embeddings(stacks, b, true);
  const auto ser = extract_embeddings(stacks, b, false);
  ASSERT_EQ(par.size(), ser.size());
  for (std::size_t i = 0; i < par.size(); ++i) {
    EXPECT_EQ(par[i].utt_id, stacks[i].utt_id);
    EXPECT_EQ(par[i].values, ser[i].values);
  }
  stacks[5].features = Tensor<float>(Shape{32, 7, 10});
  EXPECT_THROW(extract_embeddings(stacks, b), DimensionError);
}

TEST(ParameterCount, PublishedSizes) {
  const double base = static_cast<double>(count_parameters(BackendConfig::base()));
  const double large = static_cast<double>(count_parameters(BackendConfig::large()));
  EXPECT_EQ(count_parameters(BackendConfig::base()), 1446216u);
  EXPECT_EQ(count_parameters(BackendConfig::large()), 2044256u);
  EXPECT_LE(std::abs(base / 1.7e6 - 1), 0.20);
  EXPECT_LE(std::abs(large / 2.3e6 - 1), 0.20);
}

TEST(ParameterCount, FormulaMatchesAllocatedTensors) {
  for (auto mode : {AggregationMode::SigmoidMax, AggregationMode::SoftmaxSum,
                    AggregationMode::StaticSuperb}) {
    BackendConfig cfg = BackendConfig::toy();
    cfg.lap.mode = mode;
    auto b = init_backend<float>(cfg, 1);
    std::size_t n = 0;
    for (auto* p : b.parameters()) n += p->numel();
    EXPECT_EQ(count_parameters(cfg), n) << to_string(mode);
  }
  EXPECT_EQ(count_parameters(BackendConfig::toy()),
            4 * (8 * 32 + 2 * 4 * 8) + 64 * 32 + 2 * 64 + 32 * 3 * 64 + 32 + 64 * 32 +
                64 + 32 * 2 * 64 + 32 + 2 * 32);
}

TEST(EmbeddingsTsv, RoundTripsFloatValues) {
  std::vector<SpeakerEmbedding> e{{"a", 10, {0.1f, -2.5e-7f, 3.25f}}, {"b", 3, {1.0f / 3}}};
  std::stringstream io;
  write_embeddings_tsv(io, e);
  const auto back = read_embeddings_tsv(io);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].num_frames, 3u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < e[i].values.size(); ++j)
      EXPECT_EQ(static_cast<float>(back[i].values[j]), static_cast<float>(e[i].values[j]));
}

}  // namespace
}  // namespace lap
