// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "vitatt/error.hpp"
#include "vitatt/kernels.hpp"

namespace vitatt::kernels {
namespace {

std::atomic<int> g_active{-1};

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got < want) {
    throw DimensionError(std::string("kernel operand '") + what + "' has " +
                         std::to_string(got) + " elements, needs " +
                         std::to_string(want));
  }
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() {
  if (const char* env = std::getenv("VITATT_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
      if (want == isa_name(isa) && isa_supported(isa)) return isa;
    }
  }
  if (isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_supported(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

Isa active_isa() {
  int v = g_active.load(std::memory_order_relaxed);
  if (v < 0) {
    v = static_cast<int>(detect_isa());
    g_active.store(v, std::memory_order_relaxed);
  }
  return static_cast<Isa>(v);
}

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("SIMD variant '" + std::string(isa_name(isa)) +
                                "' is not supported on this machine");
  }
  g_active.store(static_cast<int>(isa), std::memory_order_relaxed);
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k,
              std::span<const double> a, std::span<const double> b,
              std::span<double> c) {
  check_size(a.size(), m * k, "a");
  check_size(b.size(), k * n, "b");
  check_size(c.size(), m * n, "c");
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::kAvx2: return avx2::gemm_acc(m, n, k, a.data(), b.data(), c.data());
#endif
#if defined(__aarch64__)
    case Isa::kNeon: return neon::gemm_acc(m, n, k, a.data(), b.data(), c.data());
#endif
    default: return scalar::gemm_acc(m, n, k, a.data(), b.data(), c.data());
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_size(y.size(), x.size(), "y");
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::kAvx2: return avx2::axpy(x.size(), alpha, x.data(), y.data());
#endif
#if defined(__aarch64__)
    case Isa::kNeon: return neon::axpy(x.size(), alpha, x.data(), y.data());
#endif
    default: return scalar::axpy(x.size(), alpha, x.data(), y.data());
  }
}

void pairwise_sq_dists(std::size_t n, std::size_t dim,
                       std::span<const double> xt, std::span<double> d) {
  check_size(xt.size(), n * dim, "xt");
  check_size(d.size(), n * n, "d");
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::kAvx2: return avx2::pairwise_sq_dists(n, dim, xt.data(), d.data());
#endif
#if defined(__aarch64__)
    case Isa::kNeon: return neon::pairwise_sq_dists(n, dim, xt.data(), d.data());
#endif
    default: return scalar::pairwise_sq_dists(n, dim, xt.data(), d.data());
  }
}

}  // namespace vitatt::kernels
