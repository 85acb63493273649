// SPDX-License-Identifier: Apache-2.0
//
// AVX2 variants. Functions carry a target attribute instead of the whole
// translation unit being built with -mavx2, so nothing here leaks AVX code
// into inline functions shared with the rest of the program. FMA is
// deliberately not enabled: products and sums stay separately rounded, which
// keeps results bitwise equal to the scalar reference.
#include "vitatt/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#define VITATT_AVX2 __attribute__((target("avx2")))

namespace vitatt::kernels::avx2 {

VITATT_AVX2 void gemm_acc(std::size_t m, std::size_t n, std::size_t k,
                          const double* a, const double* b, double* c) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d av = _mm256_set1_pd(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

VITATT_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  const std::size_t n4 = n & ~std::size_t{3};
  std::size_t i = 0;
  for (; i < n4; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

VITATT_AVX2 void pairwise_sq_dists(std::size_t n, std::size_t dim,
                                   const double* xt, double* d) {
  for (std::size_t i = 0; i < n * n; ++i) d[i] = 0.0;
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n; ++i) {
    double* drow = d + i * n;
    for (std::size_t q = 0; q < dim; ++q) {
      const double* col = xt + q * n;
      const double xi = col[i];
      const __m256d xv = _mm256_set1_pd(xi);
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        const __m256d diff = _mm256_sub_pd(xv, _mm256_loadu_pd(col + j));
        const __m256d sq = _mm256_mul_pd(diff, diff);
        _mm256_storeu_pd(drow + j, _mm256_add_pd(_mm256_loadu_pd(drow + j), sq));
      }
      for (; j < n; ++j) {
        const double diff = xi - col[j];
        drow[j] += diff * diff;
      }
    }
  }
}

}  // namespace vitatt::kernels::avx2

#endif
