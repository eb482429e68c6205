#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace kecae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad; // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node &)> backward_fn;

  std::vector<double> &grad_buffer() {
    if (grad.empty())
      grad.assign(values.size(), 0.0);
    return grad;
  }
};

std::uint64_t next_node_id();

} // namespace detail

/// Shared handle to a node in a reverse-mode gradient graph.
///
/// Copies alias the same storage. Values are row-major; image tensors are NCHW.
/// Every op allocates a fresh node whose id is larger than the ids of its
/// inputs, so sorting reachable nodes by descending id is a valid reverse
/// topological order.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values.size(); }
  std::uint64_t id() const { return node_->id; }

  std::span<const double> values() const { return node_->values; }
  std::span<double> values() { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph history.
  Tensor detach() const;

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node &)> backward_fn);
  detail::Node &node() const { return *node_; }
  const std::shared_ptr<detail::Node> &node_ptr() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Reverse pass from a single-element tensor. Gradients accumulate into every
/// requires-grad ancestor; leaves keep accumulating across calls until
/// zero_grad().
void backward(const Tensor &loss);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

bool grad_mode_enabled();

} // namespace kecae
