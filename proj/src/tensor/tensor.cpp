// SPDX-License-Identifier: Apache-2.0
#include "vitatt/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "vitatt/error.hpp"
#include "vitatt/kernels.hpp"

namespace vitatt {
namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, std::string_view op,
                   Node::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (!needs) return out;
  out.impl_->requires_grad = true;
  out.impl_->creator = std::make_shared<Node>(
      Node{op, std::move(inputs), std::move(backward)});
  return out;
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, std::string_view op,
                   Node::BackwardFn backward) {
  return make_result(std::move(shape), std::move(data),
                     std::vector<Tensor>(inputs), op, std::move(backward));
}

void accumulate_grad(Tensor t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  kernels::axpy(1.0, g, t.mutable_grad());
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS; a frame is (tensor, next input to visit).
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const Node* node = t.creator();
    if (node != nullptr && next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (in.defined() && in.requires_grad() && visited.insert(in.impl()).second) {
        stack.emplace_back(in, 0);
      }
      continue;
    }
    tape.order_.push_back(t);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (order_.empty()) return;
  Tensor root = order_.back();
  std::span<double> seed = root.mutable_grad();
  std::fill(seed.begin(), seed.end(), 1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const Node* node = it->creator();
    if (node == nullptr || !it->has_grad()) continue;
    node->backward(it->grad());
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward(): loss is not on a gradient tape");
  }
  Tape::record(loss).backward();
}

}  // namespace vitatt
