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

#include "lap/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lap::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

// Work below which the tiles are not worth setting up.
constexpr std::size_t kSmallGemmWork = 4096;

// Shortest shared dimension for which A * B^T runs as row dot products.
constexpr std::size_t kDotMinDepth = 64;

// Register tile: kTileRows rows of C by one 64-byte vector of columns.
constexpr std::size_t kTileRows = 8;
template <typename Real>
constexpr std::size_t kTileCols = 64 / sizeof(Real);

// C tile (MR x NR, leading dimension ldc) += A rows * B panel, where A
// element (i, p) lives at a[i * row_stride + p * col_stride] and B rows are
// ldb apart.
template <typename Real, std::size_t MR, std::size_t NR>
void full_tile(std::size_t k, const Real* a, std::size_t row_stride,
               std::size_t col_stride, const Real* b, std::size_t ldb, Real* c,
               std::size_t ldc, bool accumulate) {
  Real t[MR][NR];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) t[r][j] = accumulate ? c[r * ldc + j] : Real(0);
  for (std::size_t p = 0; p < k; ++p) {
    const Real* brow = b + p * ldb;
    for (std::size_t r = 0; r < MR; ++r) {
      const Real av = a[r * row_stride + p * col_stride];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) t[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[r * ldc + j] = t[r][j];
}

struct Operands {
  std::size_t m, n, k;
  std::size_t row_stride, col_stride;  // of A
};

// One band of kTileRows rows of C. Ragged tiles run through the full-size
// kernel on zero-padded copies; `edge_panel` is the last column block of B
// padded to kTileCols (empty when n divides evenly).
template <typename Real>
void row_band(std::size_t i0, const Operands& op, const Real* a, const Real* b,
              const std::vector<Real>& edge_panel, Real* c, bool accumulate) {
  constexpr std::size_t MR = kTileRows, NR = kTileCols<Real>;
  const std::size_t mr = std::min(MR, op.m - i0);
  const Real* ablock = a + i0 * op.row_stride;
  std::size_t rs = op.row_stride, cs = op.col_stride;
  std::vector<Real> apad;
  if (mr < MR) {
    apad.assign(MR * op.k, Real(0));
    for (std::size_t r = 0; r < mr; ++r)
      for (std::size_t p = 0; p < op.k; ++p)
        apad[r * op.k + p] = ablock[r * op.row_stride + p * op.col_stride];
    ablock = apad.data();
    rs = op.k;
    cs = 1;
  }
  Real* cblock = c + i0 * op.n;
  for (std::size_t j0 = 0; j0 < op.n; j0 += NR) {
    const std::size_t nr = std::min(NR, op.n - j0);
    if (mr == MR && nr == NR) {
      full_tile<Real, MR, NR>(op.k, ablock, rs, cs, b + j0, op.n, cblock + j0, op.n,
                              accumulate);
      continue;
    }
    Real ctile[MR * NR] = {};
    if (accumulate)
      for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) ctile[r * NR + j] = cblock[r * op.n + j0 + j];
    const bool ragged = nr < NR;
    full_tile<Real, MR, NR>(op.k, ablock, rs, cs, ragged ? edge_panel.data() : b + j0,
                            ragged ? NR : op.n, ctile, NR, true);
    for (std::size_t r = 0; r < mr; ++r)
      for (std::size_t j = 0; j < nr; ++j) cblock[r * op.n + j0 + j] = ctile[r * NR + j];
  }
}

// Plain i-p-j loop for products too small to amortize tile padding.
template <typename Real>
void small(const Operands& op, const Real* a, const Real* b, Real* c, bool accumulate) {
  if (op.n == 1 && op.col_stride == 1) {  // matrix-vector
    for (std::size_t i = 0; i < op.m; ++i) {
      const Real* arow = a + i * op.row_stride;
      Real acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < op.k; ++p) acc += arow[p] * b[p];
      c[i] = accumulate ? c[i] + acc : acc;
    }
    return;
  }
  for (std::size_t i = 0; i < op.m; ++i) {
    Real* crow = c + i * op.n;
    if (!accumulate) std::fill(crow, crow + op.n, Real(0));
    for (std::size_t p = 0; p < op.k; ++p) {
      const Real av = a[i * op.row_stride + p * op.col_stride];
      const Real* brow = b + p * op.n;
#pragma omp simd
      for (std::size_t j = 0; j < op.n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Real>
void tiled(const Operands& op, const Real* a, const Real* b, Real* c, bool accumulate) {
  if (op.m < kTileRows || op.n == 1 || op.m * op.n * op.k < kSmallGemmWork) {
    small(op, a, b, c, accumulate);
    return;
  }
  constexpr std::size_t NR = kTileCols<Real>;
  std::vector<Real> edge_panel;
  if (const std::size_t tail = op.n % NR) {
    const std::size_t j0 = op.n - tail;
    edge_panel.assign(op.k * NR, Real(0));
    for (std::size_t p = 0; p < op.k; ++p)
      for (std::size_t j = 0; j < tail; ++j) edge_panel[p * NR + j] = b[p * op.n + j0 + j];
  }
  const std::size_t bands = (op.m + kTileRows - 1) / kTileRows;
  if (op.m * op.n * op.k < kParallelGemmWork || bands < 2 || max_threads() < 2) {
    for (std::size_t t = 0; t < bands; ++t)
      row_band(t * kTileRows, op, a, b, edge_panel, c, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(bands); ++t)
    row_band(static_cast<std::size_t>(t) * kTileRows, op, a, b, edge_panel, c,
             accumulate);
}

template <typename Real>
std::vector<Real> transpose_copy(const Real* src, std::size_t rows,
                                 std::size_t cols) {
  std::vector<Real> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) out[q * rows + r] = src[r * cols + q];
  return out;
}

// C = A * B^T with both operands row-major over k: every entry is a dot
// product of two contiguous rows, which beats transposing B when k is long.
template <typename Real>
void dot_rows(std::size_t m, std::size_t n, std::size_t k, const Real* a,
              const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const Real* b0 = b + j * k;
      const Real *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
      Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (std::size_t p = 0; p < k; ++p) {
        s0 += arow[p] * b0[p];
        s1 += arow[p] * b1[p];
        s2 += arow[p] * b2[p];
        s3 += arow[p] * b3[p];
      }
      Real* out = c + i * n + j;
      if (accumulate) {
        out[0] += s0, out[1] += s1, out[2] += s2, out[3] += s3;
      } else {
        out[0] = s0, out[1] = s1, out[2] = s2, out[3] = s3;
      }
    }
    for (; j < n; ++j) {
      const Real* brow = b + j * k;
      Real s0 = 0;
#pragma omp simd reduction(+ : s0)
      for (std::size_t p = 0; p < k; ++p) s0 += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s0 : s0;
    }
  }
}

}  // namespace

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
          std::size_t k, const Real* a, const Real* b, Real* c,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  const Operands op{m, n, k, trans_a == Trans::No ? k : 1,
                    trans_a == Trans::No ? std::size_t{1} : m};
  if (trans_b == Trans::No) {
    tiled(op, a, b, c, accumulate);
  } else if (trans_a == Trans::No && k >= kDotMinDepth &&
             m * n * k < kParallelGemmWork) {
    dot_rows(m, n, k, a, b, c, accumulate);
  } else {
    const auto bt = transpose_copy(b, n, k);
    tiled(op, a, bt.data(), c, accumulate);
  }
}

template <typename Real>
void gemm_reference(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n,
                    std::size_t k, const Real* a, const Real* b, Real* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = trans_a == Trans::No ? a[i * k + p] : a[p * m + i];
        const Real bv = trans_b == Trans::No ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t,
                          const float*, const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t,
                           const double*, const double*, double*, bool);
template void gemm_reference<float>(Trans, Trans, std::size_t, std::size_t,
                                    std::size_t, const float*, const float*,
                                    float*, bool);
template void gemm_reference<double>(Trans, Trans, std::size_t, std::size_t,
                                     std::size_t, const double*, const double*,
                                     double*, bool);

}  // namespace lap::kernels
