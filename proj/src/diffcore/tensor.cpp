#include "kecae/tensor.hpp"

#include "kecae/errors.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace kecae {

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto e : shape)
    n *= e;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
} // namespace detail

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->id = detail::next_node_id();
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1)
    throw RankError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor Tensor::detach() const { return from(node_->shape, node_->values, false); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           std::function<void(detail::Node &)> backward_fn) {
  Tensor out = from(std::move(shape), std::move(values), false);
  if (!g_grad_mode)
    return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor &t) { return t.defined() && t.requires_grad(); });
  if (!any)
    return out;
  auto &n = *out.node_;
  n.requires_grad = true;
  n.parents.reserve(inputs.size());
  for (auto &t : inputs)
    n.parents.push_back(t.node_);
  n.backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw RankError("backward() needs a scalar loss, got shape " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad())
    return;

  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> seen;
  std::vector<detail::Node *> stack{&loss.node()};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    detail::Node *n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto &p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node *a, const detail::Node *b) { return a->id > b->id; });

  // Interior nodes of this graph start from zero; leaves accumulate.
  for (auto *n : order) {
    if (n->backward_fn)
      n->grad.assign(n->values.size(), 0.0);
    else
      n->grad_buffer();
  }
  loss.node().grad[0] += 1.0;
  for (auto *n : order)
    if (n->backward_fn)
      n->backward_fn(*n);
}

} // namespace kecae
