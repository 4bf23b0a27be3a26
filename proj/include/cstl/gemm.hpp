#pragma once

#include <cstdint>

#include "cstl/parallel.hpp"

namespace cstl {

// Row-major matrix kernels. Accumulation over k always runs in ascending
// order per output element, so results are identical for any thread count.

namespace detail {

template <typename T>
void gemm_nn_rows(int lo, int hi, int n, int k, const T* a, int lda,
                  const T* b, int ldb, T* c, int ldc, bool accumulate) {
  for (int i = lo; i < hi; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + static_cast<std::int64_t>(i) * lda;
    for (int kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      if (aik == T(0)) continue;
      const T* brow = b + static_cast<std::int64_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void gemm_tn_rows(int lo, int hi, int n, int k, const T* a, int lda,
                  const T* b, int ldb, T* c, int ldc, bool accumulate) {
  for (int i = lo; i < hi; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int kk = 0; kk < k; ++kk) {
      const T aik = a[static_cast<std::int64_t>(kk) * lda + i];
      if (aik == T(0)) continue;
      const T* brow = b + static_cast<std::int64_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_rows(int lo, int hi, int n, int k, const T* a, int lda,
                  const T* b, int ldb, T* c, int ldc, bool accumulate) {
  // Dot products with a fixed 16-lane partial-sum layout; the lane loop
  // vectorizes and the final combine order never changes.
  constexpr int kLanes = 16;
  T acc[kLanes];
  for (int i = lo; i < hi; ++i) {
    const T* arow = a + static_cast<std::int64_t>(i) * lda;
    T* crow = c + static_cast<std::int64_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::int64_t>(j) * ldb;
      for (int l = 0; l < kLanes; ++l) acc[l] = T(0);
      int kk = 0;
      for (; kk + kLanes <= k; kk += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
          acc[l] += arow[kk + l] * brow[kk + l];
        }
      }
      T s = T(0);
      for (int l = 0; l < kLanes; ++l) s += acc[l];
      for (; kk < k; ++kk) s += arow[kk] * brow[kk];
      if (accumulate) {
        crow[j] += s;
      } else {
        crow[j] = s;
      }
    }
  }
}

inline bool worth_threading(int m, int n, int k) {
  return static_cast<std::int64_t>(m) * n * k >= (1 << 16) && m > 1;
}

}  // namespace detail

// C[m,n] = A[m,k] * B[k,n]  (+= when accumulate)
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate = false) {
  if (detail::worth_threading(m, n, k)) {
    const int chunk = 8;
    const int blocks = (m + chunk - 1) / chunk;
    parallel_for(0, blocks, [&](std::int64_t blk) {
      const int lo = static_cast<int>(blk) * chunk;
      const int hi = lo + chunk < m ? lo + chunk : m;
      detail::gemm_nn_rows(lo, hi, n, k, a, lda, b, ldb, c, ldc, accumulate);
    });
  } else {
    detail::gemm_nn_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

// C[m,n] = A^T * B where A is k x m.
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate = false) {
  if (detail::worth_threading(m, n, k)) {
    const int chunk = 8;
    const int blocks = (m + chunk - 1) / chunk;
    parallel_for(0, blocks, [&](std::int64_t blk) {
      const int lo = static_cast<int>(blk) * chunk;
      const int hi = lo + chunk < m ? lo + chunk : m;
      detail::gemm_tn_rows(lo, hi, n, k, a, lda, b, ldb, c, ldc, accumulate);
    });
  } else {
    detail::gemm_tn_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

// C[m,n] = A * B^T where B is n x k.
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate = false) {
  if (detail::worth_threading(m, n, k)) {
    const int chunk = 8;
    const int blocks = (m + chunk - 1) / chunk;
    parallel_for(0, blocks, [&](std::int64_t blk) {
      const int lo = static_cast<int>(blk) * chunk;
      const int hi = lo + chunk < m ? lo + chunk : m;
      detail::gemm_nt_rows(lo, hi, n, k, a, lda, b, ldb, c, ldc, accumulate);
    });
  } else {
    detail::gemm_nt_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

}  // namespace cstl
