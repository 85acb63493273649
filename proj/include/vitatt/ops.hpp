// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vitatt/tensor.hpp"

namespace vitatt {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---- linear algebra ----

// a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched product over the leading axis: a[B×m×k] · b[B×k×n], or
// a[B×m×k] · b[B×n×k]ᵀ when transpose_b is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[…×d] + bias[d], broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// GELU, tanh approximation:
//   0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);
// x·sigmoid(x)
Tensor swish(const Tensor& x);

// ---- reductions ----

Tensor sum(const Tensor& x);
// Scalar tensor holding x.data()[flat_index].
Tensor element(const Tensor& x, std::size_t flat_index);

// ---- normalization ----

// Softmax over the last axis, stabilized by subtracting the row maximum.
// Throws NumericError on NaN input.
Tensor softmax_rows(const Tensor& x);

// Per-vector normalization over the last axis followed by gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = kBatchNormMomentum;
  double eps = kBatchNormEps;

  explicit BatchNormStats(std::size_t features = 0)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

// x[b×d]. Training mode normalizes with batch statistics (b ≥ 2) and updates
// the running statistics (unbiased variance); eval mode uses the running ones.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  BatchNormStats& stats, bool training);

// ---- loss ----

// Σᵢ w[yᵢ]·(−log softmax(logitsᵢ)[yᵢ]) / Σᵢ w[yᵢ]
Tensor cross_entropy_weighted(const Tensor& logits,
                              std::span<const std::size_t> labels,
                              std::span<const double> class_weights);

// ---- layout ----

Tensor reshape(const Tensor& x, Shape shape);

// Rows of x[n×d] picked by index (repeats allowed); gradients scatter-add.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Stacks 2-D tensors with equal column counts along the row axis.
Tensor concat_rows(const std::vector<Tensor>& parts);

// x[A×B×C] → [B×A×C]
Tensor swap_leading_axes(const Tensor& x);

// x[B·T × h·dh] → [B·h × T × dh]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
// Inverse of split_heads.
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

}  // namespace vitatt
