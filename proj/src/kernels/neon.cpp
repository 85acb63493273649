// SPDX-License-Identifier: Apache-2.0
//
// NEON variants for AArch64 (two doubles per register). Separate vmulq/vaddq
// keep rounding identical to the scalar reference.
#include "vitatt/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace vitatt::kernels::neon {

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c) {
  const std::size_t n2 = n & ~std::size_t{1};
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const float64x2_t av = vdupq_n_f64(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n2; j += 2) {
        const float64x2_t prod = vmulq_f64(av, vld1q_f64(brow + j));
        vst1q_f64(crow + j, vaddq_f64(vld1q_f64(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const float64x2_t av = vdupq_n_f64(alpha);
  const std::size_t n2 = n & ~std::size_t{1};
  std::size_t i = 0;
  for (; i < n2; i += 2) {
    const float64x2_t prod = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void pairwise_sq_dists(std::size_t n, std::size_t dim, const double* xt,
                       double* d) {
  for (std::size_t i = 0; i < n * n; ++i) d[i] = 0.0;
  const std::size_t n2 = n & ~std::size_t{1};
  for (std::size_t i = 0; i < n; ++i) {
    double* drow = d + i * n;
    for (std::size_t q = 0; q < dim; ++q) {
      const double* col = xt + q * n;
      const double xi = col[i];
      const float64x2_t xv = vdupq_n_f64(xi);
      std::size_t j = 0;
      for (; j < n2; j += 2) {
        const float64x2_t diff = vsubq_f64(xv, vld1q_f64(col + j));
        const float64x2_t sq = vmulq_f64(diff, diff);
        vst1q_f64(drow + j, vaddq_f64(vld1q_f64(drow + j), sq));
      }
      for (; j < n; ++j) {
        const double diff = xi - col[j];
        drow[j] += diff * diff;
      }
    }
  }
}

}  // namespace vitatt::kernels::neon

#endif
