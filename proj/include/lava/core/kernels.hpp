// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw row-major f64 kernels behind the differentiable ops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace lava::kernels {

/// C[m x n] += A[m x k] * B[k x n]. For each C[i][j] the k-terms are added in
/// ascending order, independent of the blocking.
inline void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
                     const double* b, double* c) {
  constexpr std::size_t kBlockK = 128;
  constexpr std::size_t kBlockN = 512;
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t j1 = std::min(n, j0 + kBlockN);
      const std::size_t width = j1 - j0;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        double* c0 = c + i * n + j0;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        for (std::size_t t = k0; t < k1; ++t) {
          const double a0 = a[i * k + t];
          const double a1 = a[(i + 1) * k + t];
          const double a2 = a[(i + 2) * k + t];
          const double a3 = a[(i + 3) * k + t];
          const double* brow = b + t * n + j0;
          for (std::size_t j = 0; j < width; ++j) {
            const double bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        double* crow = c + i * n + j0;
        for (std::size_t t = k0; t < k1; ++t) {
          const double av = a[i * k + t];
          const double* brow = b + t * n + j0;
          for (std::size_t j = 0; j < width; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

/// out[cols x rows] = in[rows x cols]^T
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

inline std::vector<double> transposed(std::size_t rows, std::size_t cols, const double* in) {
  std::vector<double> out(rows * cols);
  transpose(rows, cols, in, out.data());
  return out;
}

/// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
                        const double* b, double* c) {
  const auto bt = transposed(n, k, b);
  gemm_acc(m, k, n, a, bt.data(), c);
}

/// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
                        const double* b, double* c) {
  const auto at = transposed(k, m, a);
  gemm_acc(m, k, n, at.data(), b, c);
}

/// Numerically stable in-place softmax of one row.
inline void softmax_row(std::span<double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

}  // namespace lava::kernels
