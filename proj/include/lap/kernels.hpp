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

// Dense GEMM kernels. `gemm` is the OpenMP-parallel, SIMD-friendly kernel used
// by the autograd tape; `gemm_reference` is the plain serial triple loop kept
// for tests and benchmarks.
//
// Operands are row-major. With Trans::No, A is m x k and B is k x n; with
// Trans::Yes the operand is stored transposed (A as k x m, B as n x k).
// C is m x n. When `accumulate` is false C is overwritten.

#pragma once

#include <cstddef>

namespace lap::kernels {

enum class Trans { No, Yes };

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, const Real* a, const Real* b, Real* c,
          bool accumulate);

template <typename Real>
void gemm_reference(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
                    std::size_t k, const Real* a, const Real* b, Real* c,
                    bool accumulate);

/// Work (m*n*k) below which `gemm` stays on the calling thread.
inline constexpr std::size_t kParallelGemmWork = 1u << 18;

/// Number of OpenMP workers (1 when built without OpenMP).
int max_threads();
void set_num_threads(int n);

}  // namespace lap::kernels
