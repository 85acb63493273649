// SPDX-License-Identifier: Apache-2.0
#include "vitatt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vitatt/error.hpp"
#include "vitatt/kernels.hpp"

namespace vitatt {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined() && t.rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) +
              " operand, got " + (t.defined() ? shape_str(t.shape()) : "<undefined>"));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// rows×cols row-major → cols×rows
std::vector<double> transposed(std::span<const double> src, std::size_t rows,
                               std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

std::size_t last_dim(const Tensor& x) { return x.rank() == 0 ? 1 : x.shape().back(); }

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Batched products shared by matmul and bmm. Shapes are already validated.
struct BmmDims {
  std::size_t batch, m, k, n;
  bool transpose_b;
};

std::vector<double> bmm_forward(const BmmDims& d, std::span<const double> a,
                                std::span<const double> b) {
  std::vector<double> out(d.batch * d.m * d.n, 0.0);
  for (std::size_t i = 0; i < d.batch; ++i) {
    auto ai = a.subspan(i * d.m * d.k, d.m * d.k);
    auto bi = b.subspan(i * d.k * d.n, d.k * d.n);
    std::span<double> oi(out.data() + i * d.m * d.n, d.m * d.n);
    if (d.transpose_b) {
      const auto bt = transposed(bi, d.n, d.k);
      kernels::gemm_acc(d.m, d.n, d.k, ai, bt, oi);
    } else {
      kernels::gemm_acc(d.m, d.n, d.k, ai, bi, oi);
    }
  }
  return out;
}

Node::BackwardFn bmm_backward(const BmmDims& d, Tensor a, Tensor b) {
  return [d, a, b](std::span<const double> g) mutable {
    for (std::size_t i = 0; i < d.batch; ++i) {
      auto gi = g.subspan(i * d.m * d.n, d.m * d.n);
      auto ai = a.data().subspan(i * d.m * d.k, d.m * d.k);
      auto bi = b.data().subspan(i * d.k * d.n, d.k * d.n);
      if (a.requires_grad()) {
        auto dai = a.mutable_grad().subspan(i * d.m * d.k, d.m * d.k);
        if (d.transpose_b) {
          // b stored n×k: da = g · b
          kernels::gemm_acc(d.m, d.k, d.n, gi, bi, dai);
        } else {
          const auto bt = transposed(bi, d.k, d.n);
          kernels::gemm_acc(d.m, d.k, d.n, gi, bt, dai);
        }
      }
      if (b.requires_grad()) {
        auto dbi = b.mutable_grad().subspan(i * d.k * d.n, d.k * d.n);
        if (d.transpose_b) {
          // db (n×k) = gᵀ · a
          const auto gt = transposed(gi, d.m, d.n);
          kernels::gemm_acc(d.n, d.k, d.m, gt, ai, dbi);
        } else {
          const auto at = transposed(ai, d.m, d.k);
          kernels::gemm_acc(d.k, d.n, d.m, at, gi, dbi);
        }
      }
    }
  };
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const BmmDims d{1, a.dim(0), a.dim(1), b.dim(1), false};
  return make_result({d.m, d.n}, bmm_forward(d, a.data(), b.data()), {a, b},
                     "matmul", bmm_backward(d, a, b));
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t k_b = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  require(a.dim(0) == b.dim(0) && a.dim(2) == k_b,
          "bmm: incompatible shapes " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  const BmmDims d{a.dim(0), a.dim(1), a.dim(2), n, transpose_b};
  return make_result({d.batch, d.m, d.n}, bmm_forward(d, a.data(), b.data()),
                     {a, b}, "bmm", bmm_backward(d, a, b));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add",
                     [a, b](std::span<const double> g) {
                       accumulate_grad(a, g);
                       accumulate_grad(b, g);
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul",
                     [a, b](std::span<const double> g) {
                       std::vector<double> t(g.size());
                       if (a.requires_grad()) {
                         for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * b.data()[i];
                         accumulate_grad(a, t);
                       }
                       if (b.requires_grad()) {
                         for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * a.data()[i];
                         accumulate_grad(b, t);
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  return make_result(x.shape(), std::move(out), {x}, "scale",
                     [x = Tensor(x), factor](std::span<const double> g) mutable {
                       if (x.requires_grad()) kernels::axpy(factor, g, x.mutable_grad());
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(bias.rank() == 1 && x.rank() >= 1 && last_dim(x) == bias.dim(0),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match " +
              shape_str(x.shape()));
  const std::size_t d = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % d];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias",
                     [x, bias, d](std::span<const double> g) {
                       accumulate_grad(x, g);
                       if (bias.requires_grad()) {
                         std::vector<double> gb(d, 0.0);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                         accumulate_grad(bias, gb);
                       }
                     });
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(x.data()[i]);
  return make_result(x.shape(), std::move(out), {x}, "gelu",
                     [x](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = x.data()[i];
                         const double u = kSqrt2OverPi * (v + kGeluC * v * v * v);
                         const double t = std::tanh(u);
                         const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
                         dx[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                       }
                       accumulate_grad(x, dx);
                     });
}

Tensor swish(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v * sigmoid(v);
  }
  return make_result(x.shape(), std::move(out), {x}, "swish",
                     [x](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = x.data()[i];
                         const double s = sigmoid(v);
                         dx[i] = g[i] * (s + v * s * (1.0 - s));
                       }
                       accumulate_grad(x, dx);
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, "sum", [x](std::span<const double> g) {
    std::vector<double> dx(x.numel(), g[0]);
    accumulate_grad(x, dx);
  });
}

Tensor element(const Tensor& x, std::size_t flat_index) {
  require(flat_index < x.numel(), "element: index " + std::to_string(flat_index) +
                                      " out of range for " + shape_str(x.shape()));
  return make_result({}, {x.data()[flat_index]}, {x}, "element",
                     [x, flat_index](std::span<const double> g) {
                       std::vector<double> dx(x.numel(), 0.0);
                       dx[flat_index] = g[0];
                       accumulate_grad(x, dx);
                     });
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() >= 1, "softmax_rows: needs rank >= 1");
  const std::size_t n = last_dim(x);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.data().subspan(r * n, n);
    double mx = in[0];
    for (double v : in) {
      if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, v);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = std::exp(in[j] - mx);
      z += out[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
  }
  std::vector<double> y = out;
  return make_result(x.shape(), std::move(out), {x}, "softmax_rows",
                     [x, y = std::move(y), n, rows](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           dx[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
                       }
                       accumulate_grad(x, dx);
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require(x.rank() >= 1 && gain.rank() == 1 && bias.rank() == 1 &&
              gain.dim(0) == last_dim(x) && bias.dim(0) == last_dim(x),
          "layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
              shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  const std::size_t d = last_dim(x);
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.data().subspan(r * d, d);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
       rows](std::span<const double> g) {
        if (gain.requires_grad() || bias.requires_grad()) {
          std::vector<double> dg(d, 0.0), db(d, 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            dg[i % d] += g[i] * xhat[i];
            db[i % d] += g[i];
          }
          accumulate_grad(gain, dg);
          accumulate_grad(bias, db);
        }
        if (!x.requires_grad()) return;
        std::vector<double> dx(g.size());
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = g[r * d + j] * gain.data()[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[r * d + j];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            dx[r * d + j] = inv_std[r] * (dxhat[j] - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
          }
        }
        accumulate_grad(x, dx);
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  BatchNormStats& stats, bool training) {
  require_rank(x, 2, "batch_norm");
  const std::size_t b = x.dim(0);
  const std::size_t d = x.dim(1);
  require(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 && bias.dim(0) == d &&
              stats.running_mean.size() == d && stats.running_var.size() == d,
          "batch_norm: parameter widths do not match " + shape_str(x.shape()));
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  if (training) {
    if (b < 2) {
      throw std::invalid_argument(
          "batch_norm: training mode needs a batch of at least 2 (variance undefined)");
    }
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x.data()[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.data()[i * d + j] - mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double biased = var[j] / static_cast<double>(b);
      const double unbiased = var[j] / static_cast<double>(b - 1);
      inv_std[j] = 1.0 / std::sqrt(biased + stats.eps);
      stats.running_mean[j] = (1.0 - stats.momentum) * stats.running_mean[j] + stats.momentum * mean[j];
      stats.running_var[j] = (1.0 - stats.momentum) * stats.running_var[j] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = stats.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + stats.eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      xhat[k] = (x.data()[k] - mean[j]) * inv_std[j];
      out[k] = xhat[k] * gain.data()[j] + bias.data()[j];
    }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "batch_norm",
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), b, d,
       training](std::span<const double> g) {
        std::vector<double> dg(d, 0.0), db(d, 0.0);
        for (std::size_t k = 0; k < g.size(); ++k) {
          dg[k % d] += g[k] * xhat[k];
          db[k % d] += g[k];
        }
        accumulate_grad(gain, dg);
        accumulate_grad(bias, db);
        if (!x.requires_grad()) return;
        std::vector<double> dx(g.size());
        if (!training) {
          for (std::size_t k = 0; k < g.size(); ++k)
            dx[k] = g[k] * gain.data()[k % d] * inv_std[k % d];
        } else {
          const double inv_b = 1.0 / static_cast<double>(b);
          std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
          for (std::size_t k = 0; k < g.size(); ++k) {
            const double dxh = g[k] * gain.data()[k % d];
            sum_dxhat[k % d] += dxh;
            sum_dxhat_xhat[k % d] += dxh * xhat[k];
          }
          for (std::size_t k = 0; k < g.size(); ++k) {
            const std::size_t j = k % d;
            const double dxh = g[k] * gain.data()[j];
            dx[k] = inv_std[j] * (dxh - inv_b * sum_dxhat[j] - xhat[k] * inv_b * sum_dxhat_xhat[j]);
          }
        }
        accumulate_grad(x, dx);
      });
}

Tensor cross_entropy_weighted(const Tensor& logits,
                              std::span<const std::size_t> labels,
                              std::span<const double> class_weights) {
  require_rank(logits, 2, "cross_entropy_weighted");
  const std::size_t b = logits.dim(0);
  const std::size_t c = logits.dim(1);
  require(labels.size() == b, "cross_entropy_weighted: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(b) + " rows");
  require(class_weights.size() == c, "cross_entropy_weighted: " +
                                         std::to_string(class_weights.size()) +
                                         " class weights for " + std::to_string(c) + " classes");
  std::vector<double> probs(b * c);
  double total = 0.0, weight_sum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("cross_entropy_weighted: label " + std::to_string(labels[i]) +
                              " out of range [0, " + std::to_string(c) + ")");
    }
    auto row = logits.data().subspan(i * c, c);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
    const double w = class_weights[labels[i]];
    total += w * (log_z - row[labels[i]]);
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) throw NumericError("cross_entropy_weighted: weights sum to zero");
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  std::vector<double> ws(class_weights.begin(), class_weights.end());
  return make_result({}, {total / weight_sum}, {logits}, "cross_entropy_weighted",
                     [logits, probs = std::move(probs), ys = std::move(ys),
                      ws = std::move(ws), weight_sum, b, c](std::span<const double> g) {
                       std::vector<double> dx(b * c);
                       for (std::size_t i = 0; i < b; ++i) {
                         const double coef = g[0] * ws[ys[i]] / weight_sum;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = j == ys[i] ? 1.0 : 0.0;
                           dx[i * c + j] = coef * (probs[i * c + j] - target);
                         }
                       }
                       accumulate_grad(logits, dx);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape",
                     [x](std::span<const double> g) { accumulate_grad(x, g); });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < n, "gather_rows: row " + std::to_string(rows[r]) +
                             " out of range for " + shape_str(x.shape()));
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), d}, std::move(out), {x}, "gather_rows",
                     [x = Tensor(x), idx = std::move(idx), d](std::span<const double> g) mutable {
                       if (!x.requires_grad()) return;
                       auto dx = x.mutable_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) dx[idx[r] * d + j] += g[r * d + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t d = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    require(p.dim(1) == d, "concat_rows: column mismatch " + shape_str(parts.front().shape()) +
                               " vs " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({rows, d}, std::move(out), parts, "concat_rows",
                     [parts](std::span<const double> g) {
                       std::size_t offset = 0;
                       for (const auto& p : parts) {
                         accumulate_grad(p, g.subspan(offset, p.numel()));
                         offset += p.numel();
                       }
                     });
}

Tensor swap_leading_axes(const Tensor& x) {
  require_rank(x, 3, "swap_leading_axes");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((i * b + j) * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>((j * a + i) * c));
  return make_result({b, a, c}, std::move(out), {x}, "swap_leading_axes",
                     [x, a, b, c](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t i = 0; i < a; ++i)
                         for (std::size_t j = 0; j < b; ++j)
                           for (std::size_t k = 0; k < c; ++k)
                             dx[(i * b + j) * c + k] = g[(j * a + i) * c + k];
                       accumulate_grad(x, dx);
                     });
}

namespace {

// Index of element (row, col) of x[B·T × h·dh] inside the [B·h × T × dh] layout.
struct HeadLayout {
  std::size_t batch, tokens, heads, head_dim;
  std::size_t split_index(std::size_t row, std::size_t col) const {
    const std::size_t b = row / tokens, t = row % tokens;
    const std::size_t h = col / head_dim, c = col % head_dim;
    return ((b * heads + h) * tokens + t) * head_dim + c;
  }
};

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 2, "split_heads");
  require(batch > 0 && heads > 0 && x.dim(0) % batch == 0 && x.dim(1) % heads == 0,
          "split_heads: " + shape_str(x.shape()) + " not divisible into " +
              std::to_string(batch) + " samples x " + std::to_string(heads) + " heads");
  const HeadLayout L{batch, x.dim(0) / batch, heads, x.dim(1) / heads};
  const std::size_t width = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t c = 0; c < width; ++c) out[L.split_index(r, c)] = x.data()[r * width + c];
  return make_result({batch * heads, L.tokens, L.head_dim}, std::move(out), {x},
                     "split_heads", [x, L, width](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t r = 0; r < x.dim(0); ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           dx[r * width + c] = g[L.split_index(r, c)];
                       accumulate_grad(x, dx);
                     });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  require(batch > 0 && heads > 0 && x.dim(0) == batch * heads,
          "merge_heads: " + shape_str(x.shape()) + " is not " + std::to_string(batch) +
              " samples x " + std::to_string(heads) + " heads");
  const HeadLayout L{batch, x.dim(1), heads, x.dim(2)};
  const std::size_t rows = batch * L.tokens;
  const std::size_t width = heads * L.head_dim;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x.data()[L.split_index(r, c)];
  return make_result({rows, width}, std::move(out), {x}, "merge_heads",
                     [x, L, rows, width](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           dx[L.split_index(r, c)] = g[r * width + c];
                       accumulate_grad(x, dx);
                     });
}

}  // namespace vitatt
