#pragma once

// Dense row-major products used by the decoder. Work is split into column
// blocks so that the shared weight block stays cache-resident across rows.
// Every output element is accumulated in a fixed order.

#include <algorithm>
#include <cstddef>

namespace cir::kernels {

inline constexpr std::size_t kBlock = 128;

// C (m x n) += A (m x k) * B (k x n). For each C(r, j) the k terms are added
// in increasing order, exactly as a row-by-row affine map would.
inline void gemm_add(const double* a, std::size_t m, std::size_t k,
                     const double* b, std::size_t n, double* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t j1 = std::min(n, j0 + kBlock);
    for (std::size_t r = 0; r < m; ++r) {
      double* __restrict cr = c + r * n;
      const double* ar = a + r * k;
      for (std::size_t i = 0; i < k; ++i) {
        const double x = ar[i];
        const double* __restrict bi = b + i * n;
        for (std::size_t j = j0; j < j1; ++j) cr[j] += x * bi[j];
      }
    }
  }
}

// D (k x n) += A^T (k x m) * G (m x n).
inline void gemm_at_add(const double* a, std::size_t m, std::size_t k,
                        const double* g, std::size_t n, double* d) {
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t j1 = std::min(n, j0 + kBlock);
    for (std::size_t r = 0; r < m; ++r) {
      const double* __restrict gr = g + r * n;
      const double* ar = a + r * k;
      for (std::size_t i = 0; i < k; ++i) {
        const double x = ar[i];
        if (x == 0.0) continue;
        double* __restrict di = d + i * n;
        for (std::size_t j = j0; j < j1; ++j) di[j] += x * gr[j];
      }
    }
  }
}

// Four partial sums keep the loop vectorizable; the order is still fixed.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// O (m x k) += G (m x n) * B^T, with B stored k x n.
inline void gemm_bt_add(const double* g, std::size_t m, std::size_t n,
                        const double* b, std::size_t k, double* o) {
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t len = std::min(n, j0 + kBlock) - j0;
    for (std::size_t r = 0; r < m; ++r) {
      const double* gr = g + r * n + j0;
      double* orow = o + r * k;
      for (std::size_t i = 0; i < k; ++i) {
        orow[i] += dot(gr, b + i * n + j0, len);
      }
    }
  }
}

}  // namespace cir::kernels
