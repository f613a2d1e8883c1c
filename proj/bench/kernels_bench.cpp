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

// OpenMP kernels against their serial references. The tiled gemm wins even
// on one core; the thread split only pays off with more.

#include <benchmark/benchmark.h>

#include <vector>

#include "lap/embedder.hpp"
#include "lap/kernels.hpp"
#include "lap/synth.hpp"

namespace {

using lap::kernels::Trans;

std::vector<float> filled(std::size_t n, float seed) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = seed * static_cast<float>((i * 37) % 101) - 1.0f;
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 0.01f), b = filled(n * n, 0.02f);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      lap::kernels::gemm(Trans::No, Trans::Yes, n, n, n, a.data(), b.data(), c.data(), false);
    else
      lap::kernels::gemm_reference(Trans::No, Trans::Yes, n, n, n, a.data(), b.data(),
                                   c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial_reference")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256)->Arg(512);

template <bool Parallel>
void BM_ExtractEmbeddings(benchmark::State& state) {
  lap::SynthSpec spec;
  spec.num_speakers = 16;
  spec.train_utts_per_speaker = 8;
  spec.eval_utts_per_speaker = 0;
  std::vector<lap::LayerStack<float>> stacks;
  for (auto& u : lap::make_synth_utterances(spec)) stacks.push_back(std::move(u.stack));
  auto params = lap::init_backend<float>(lap::BackendConfig::toy(), 1);
  for (auto _ : state) {
    auto embs = lap::extract_embeddings(stacks, params, Parallel);
    benchmark::DoNotOptimize(embs.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(stacks.size()));
}
BENCHMARK(BM_ExtractEmbeddings<false>)->Name("extract_embeddings/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractEmbeddings<true>)->Name("extract_embeddings/openmp")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
