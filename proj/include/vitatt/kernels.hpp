// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel arithmetic kernels with a scalar reference implementation and
// SIMD variants (AVX2 on x86-64, NEON on AArch64) selected at runtime.
//
// Every SIMD variant keeps the per-element accumulation order of the scalar
// reference and uses separate multiply and add instructions (no FMA), so all
// variants produce bitwise-identical results. Callers can therefore switch
// variants without affecting determinism.

#include <cstddef>
#include <span>
#include <string_view>

namespace vitatt::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

bool isa_supported(Isa isa);

// Best supported variant, unless overridden by VITATT_SIMD=scalar|avx2|neon.
Isa detect_isa();

// Variant used by the dispatching entry points below.
Isa active_isa();

// Throws std::invalid_argument when the variant is not supported here.
void set_active_isa(Isa isa);

// c[m×n] += a[m×k] · b[k×n], all row-major and contiguous.
void gemm_acc(std::size_t m, std::size_t n, std::size_t k,
              std::span<const double> a, std::span<const double> b,
              std::span<double> c);

// y += alpha · x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// d[n×n] = squared Euclidean distances between the n points whose
// coordinates are given column-wise in xt[dim×n].
void pairwise_sq_dists(std::size_t n, std::size_t dim,
                       std::span<const double> xt, std::span<double> d);

namespace scalar {
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void pairwise_sq_dists(std::size_t n, std::size_t dim, const double* xt,
                       double* d);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void pairwise_sq_dists(std::size_t n, std::size_t dim, const double* xt,
                       double* d);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void pairwise_sq_dists(std::size_t n, std::size_t dim, const double* xt,
                       double* d);
}  // namespace neon
#endif

}  // namespace vitatt::kernels
