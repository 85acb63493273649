// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vitatt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// One recorded operation: the inputs it read and the rule that pushes the
// output gradient back into them.
struct Node {
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  std::string_view op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> creator;
};

/// Dense row-major tensor of doubles with reverse-mode gradient support.
///
/// Copies share storage (handle semantics). Outputs of operations on tensors
/// that require gradients keep a reference to the operation that produced
/// them; the resulting graph is the tape walked by backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access, outside the tape. Used by optimizers and loaders.
  std::span<double> mutable_data() { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool is_leaf() const { return impl_->creator == nullptr; }
  const Node* creator() const { return impl_->creator.get(); }

  double item() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  // Same values, fresh storage, no gradient history.
  Tensor detach() const;

  const TensorImpl* impl() const { return impl_.get(); }

 private:
  friend Tensor make_result(Shape, std::vector<double>,
                            std::initializer_list<Tensor>, std::string_view,
                            Node::BackwardFn);
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::string_view, Node::BackwardFn);

  std::shared_ptr<TensorImpl> impl_;
};

// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an operation output. When gradients are enabled and any input
// requires one, the output is attached to a Node running `backward`.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, std::string_view op,
                   Node::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, std::string_view op,
                   Node::BackwardFn backward);

// Adds `g` into t's gradient if t requires one.
void accumulate_grad(Tensor t, std::span<const double> g);

/// Recorded operations reachable from a root, in topological order (every
/// operation's inputs come before it).
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<Tensor>& order() const { return order_; }

  // Seeds the root gradient with ones and replays the rules in reverse.
  void backward();

 private:
  std::vector<Tensor> order_;
};

// Reverse-mode gradients of a scalar loss into every tensor on its tape that
// requires one. Gradients accumulate across calls; clear them in between.
void backward(const Tensor& loss);

}  // namespace vitatt
