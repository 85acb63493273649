// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for reverse-mode gradients. Independent of
// the backward rules: it only evaluates the forward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "vitatt/random.hpp"
#include "vitatt/tensor.hpp"

namespace vitatt::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  double analytic = 0.0;  // at the worst element
  double numeric = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Relative error with a floor on the denominator, so entries whose true
// gradient is ~0 are compared absolutely at that scale. The part of the gap
// that the difference quotient cannot resolve (`noise`) is not counted.
inline double rel_error(double a, double n, double noise = 0.0, double floor = 1e-6) {
  const double gap = std::max(0.0, std::abs(a - n) - noise);
  return gap / std::max({std::abs(a), std::abs(n), floor});
}

// Round-off bound of a central difference: each loss evaluation is trusted to
// 64 ulps of its magnitude.
inline double difference_noise(double fp, double fm, double step) {
  constexpr double kUlps = 64.0;
  return kUlps * std::numeric_limits<double>::epsilon() *
         std::max(std::abs(fp), std::abs(fm)) / step;
}

inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> inputs, double step = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = inputs[i];
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                     : std::vector<double>(t.numel(), 0.0);
    auto x = t.mutable_data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double saved = x[j];
      double fp, fm;
      {
        NoGradGuard guard;
        x[j] = saved + step;
        fp = loss_fn().item();
        x[j] = saved - step;
        fm = loss_fn().item();
      }
      x[j] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = rel_error(analytic[j], numeric, difference_noise(fp, fm, step));
      if (err > out.max_rel_error) out = {err, analytic[j], numeric, i, j};
    }
  }
  return out;
}

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true,
                            double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Fixed random weights, so the checked loss is not symmetric in its inputs.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed = 99);

}  // namespace vitatt::testing

#include "vitatt/ops.hpp"

namespace vitatt::testing {
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(rng, x.shape(), false);
  return sum(mul(x, w));
}
}  // namespace vitatt::testing
