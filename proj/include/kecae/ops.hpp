#pragma once

#include "kecae/tensor.hpp"

#include <cstddef>
#include <vector>

namespace kecae {

// Elementwise arithmetic. Shapes must match exactly (no broadcasting).
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
Tensor square(const Tensor &a);

// Reductions to a single-element tensor.
Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);
/// Sum of weight_i * t_i over scalar tensors.
Tensor weighted_sum(const std::vector<Tensor> &terms, const std::vector<double> &weights);

// Layout.
Tensor reshape(const Tensor &a, Shape shape);
Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
/// Slice [begin, begin+length) along `axis`.
Tensor narrow(const Tensor &a, std::size_t axis, std::size_t begin, std::size_t length);
/// Square-or-rectangular crop of an NCHW tensor, optionally mirrored left-right.
Tensor crop2d(const Tensor &x, std::size_t top, std::size_t left, std::size_t height,
              std::size_t width, bool mirror);

/// 2-D convolution. x: N×C×H×W, w: O×C×K×K, b: O (may be undefined).
Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride,
              std::size_t pad);

/// Transposed convolution, the adjoint of conv2d in its input argument.
/// x: N×I×H×W, w: I×O×K×K, b: O (may be undefined).
/// Output extent (H-1)*stride - 2*pad + K.
Tensor deconv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride,
                std::size_t pad);

enum class Mode { train, eval };

/// Per-channel running statistics owned by a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  explicit BatchNormState(std::size_t channels = 0);
};

/// Batch normalisation over N,H,W per channel (x may be N×C or N×C×H×W).
/// Train mode normalises with batch statistics and updates `state` as
/// running = (1 - momentum) * running + momentum * batch, with the unbiased
/// variance. Eval mode reads `state` only.
Tensor batchnorm2d(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                   BatchNormState &state, Mode mode, double eps = 1e-5, double momentum = 0.1);

/// y = x for x >= 0, slope * x otherwise. The derivative at 0 is taken as 1.
Tensor leaky_relu(const Tensor &x, double slope);

/// N×C×H×W -> N×C, mean over each H×W plane.
Tensor global_avg_pool(const Tensor &x);

/// x: N×F, w: O×F, b: O -> N×O.
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b);

/// Row-wise softmax of an N×K tensor (not differentiable; for reporting).
std::vector<double> softmax_rows(const Tensor &logits);

/// Mean over rows of -log softmax(logits)[label], computed with log-sum-exp.
Tensor softmax_cross_entropy(const Tensor &logits, const std::vector<int> &labels);

/// Mean over all elements of (a - b)^2.
Tensor mse(const Tensor &a, const Tensor &b);

/// Per-row Fisher ratio (var(u) + var(k)) / ((mean(u) - mean(k))^2 + eps)
/// with population (1/F) moments over each row's F elements, averaged over
/// the N rows. u, k: N×F (any trailing shape is flattened per row).
Tensor fisher_ratio(const Tensor &u, const Tensor &k, double eps);

} // namespace kecae
