// SPDX-License-Identifier: Apache-2.0
#include "vitatt/kernels.hpp"

namespace vitatt::kernels::scalar {

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aip * brow[j];
      }
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void pairwise_sq_dists(std::size_t n, std::size_t dim, const double* xt,
                       double* d) {
  for (std::size_t i = 0; i < n * n; ++i) d[i] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* drow = d + i * n;
    for (std::size_t q = 0; q < dim; ++q) {
      const double* col = xt + q * n;
      const double xi = col[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = xi - col[j];
        drow[j] += diff * diff;
      }
    }
  }
}

}  // namespace vitatt::kernels::scalar
