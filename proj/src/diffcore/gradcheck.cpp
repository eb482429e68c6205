#include "kecae/gradcheck.hpp"

#include "kecae/errors.hpp"
#include "kecae/ops.hpp"
#include "kecae/rng.hpp"

#include <algorithm>
#include <cmath>

namespace kecae {

double finite_diff_gradcheck(const ScalarFn &f, const Tensor &x, double h) {
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()),
                             true);
  const Tensor y = f(leaf);
  if (y.numel() != 1)
    throw RankError("finite_diff_gradcheck: function must return a scalar, got " +
                    shape_str(y.shape()));
  backward(y);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradGuard no_grad;
  std::vector<double> probe(x.values().begin(), x.values().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

namespace {

Tensor random_tensor(Shape shape, Rng &rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

// Same, but every entry at least `margin` away from zero (keeps kinks out of
// the difference stencil).
Tensor random_away_from_zero(Shape shape, Rng &rng, double margin) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v) {
    const double u = rng.uniform(margin, 1.5);
    x = rng.bernoulli(0.5) ? u : -u;
  }
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalarises y with fixed random weights so that every gradient entry is O(1).
Tensor project(const Tensor &y, const Tensor &weights) {
  return sum(mul(y, reshape(weights, y.shape())));
}

Tensor weights_like(std::size_t n, Rng &rng) { return random_tensor({n}, rng); }

} // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckResult> out;
  auto check = [&](std::string name, const ScalarFn &f, const Tensor &x, double h = 1e-5) {
    out.push_back({std::move(name), finite_diff_gradcheck(f, x, h)});
  };

  {
    const Tensor x = random_tensor({2, 2, 5, 5}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    const Tensor r = weights_like(2 * 3 * 3 * 3, rng);
    check("conv2d/x", [=](const Tensor &t) { return project(conv2d(t, w, b, 2, 1), r); }, x);
    check("conv2d/w", [=](const Tensor &t) { return project(conv2d(x, t, b, 2, 1), r); }, w);
    check("conv2d/b", [=](const Tensor &t) { return project(conv2d(x, w, t, 2, 1), r); }, b);
  }
  {
    const Tensor x = random_tensor({1, 1, 5, 5}, rng);
    const Tensor w = random_tensor({2, 1, 3, 3}, rng);
    const Tensor b = random_tensor({2}, rng);
    check("conv2d>leaky_relu>mean",
          [=](const Tensor &t) { return mean(leaky_relu(conv2d(t, w, b, 1, 0), 0.2)); }, x);
  }
  {
    const Tensor x = random_tensor({2, 3, 3, 3}, rng);
    const Tensor w = random_tensor({3, 2, 4, 4}, rng);
    const Tensor b = random_tensor({2}, rng);
    const Tensor r = weights_like(2 * 2 * 6 * 6, rng);
    check("deconv2d/x", [=](const Tensor &t) { return project(deconv2d(t, w, b, 2, 1), r); }, x);
    check("deconv2d/w", [=](const Tensor &t) { return project(deconv2d(x, t, b, 2, 1), r); }, w);
    check("deconv2d/b", [=](const Tensor &t) { return project(deconv2d(x, w, t, 2, 1), r); }, b);
  }
  {
    const Tensor x = random_tensor({2, 2, 3, 3}, rng);
    const Tensor gamma = random_tensor({2}, rng);
    const Tensor beta = random_tensor({2}, rng);
    const Tensor r = weights_like(x.numel(), rng);
    auto bn = [](const Tensor &xx, const Tensor &g, const Tensor &bb, Mode mode) {
      BatchNormState st(2);
      st.running_mean.values()[0] = 0.3;
      st.running_var.values()[1] = 2.0;
      return batchnorm2d(xx, g, bb, st, mode);
    };
    check("batchnorm_train/x",
          [=](const Tensor &t) { return project(bn(t, gamma, beta, Mode::train), r); }, x);
    check("batchnorm_train/gamma",
          [=](const Tensor &t) { return project(bn(x, t, beta, Mode::train), r); }, gamma);
    check("batchnorm_train/beta",
          [=](const Tensor &t) { return project(bn(x, gamma, t, Mode::train), r); }, beta);
    check("batchnorm_eval/x",
          [=](const Tensor &t) { return project(bn(t, gamma, beta, Mode::eval), r); }, x);
    const Tensor ones = Tensor::full({2}, 1.0);
    const Tensor zeros = Tensor::zeros({2});
    check("batchnorm_train>mean",
          [=](const Tensor &t) { return mean(bn(t, ones, zeros, Mode::train)); }, x, 1e-3);
  }
  {
    const Tensor x = random_away_from_zero({2, 3, 4}, rng, 0.05);
    const Tensor r = weights_like(x.numel(), rng);
    check("leaky_relu/x", [=](const Tensor &t) { return project(leaky_relu(t, 0.2), r); }, x);
  }
  {
    const Tensor x = random_tensor({2, 3, 3, 2}, rng);
    const Tensor r = weights_like(6, rng);
    check("global_avg_pool/x", [=](const Tensor &t) { return project(global_avg_pool(t), r); },
          x);
  }
  {
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor w = random_tensor({2, 4}, rng);
    const Tensor b = random_tensor({2}, rng);
    const Tensor r = weights_like(6, rng);
    check("linear/x", [=](const Tensor &t) { return project(linear(t, w, b), r); }, x);
    check("linear/w", [=](const Tensor &t) { return project(linear(x, t, b), r); }, w);
    check("linear/b", [=](const Tensor &t) { return project(linear(x, w, t), r); }, b);
  }
  {
    const Tensor z = random_tensor({4, 2}, rng);
    const std::vector<int> labels{0, 1, 1, 0};
    check("softmax_cross_entropy/logits",
          [=](const Tensor &t) { return softmax_cross_entropy(t, labels); }, z);
  }
  {
    const Tensor a = random_tensor({2, 1, 3, 3}, rng);
    const Tensor b = random_tensor({2, 1, 3, 3}, rng);
    check("mse/a", [=](const Tensor &t) { return mse(t, b); }, a);
    check("mse/b", [=](const Tensor &t) { return mse(a, t); }, b);
  }
  {
    const Tensor u = random_tensor({3, 4, 1, 1}, rng);
    Tensor k = random_tensor({3, 4, 1, 1}, rng);
    for (auto &v : k.values())
      v += 1.5; // keeps the mean gap away from the singular point
    check("fisher_ratio/u", [=](const Tensor &t) { return fisher_ratio(t, k, 1e-8); }, u);
    check("fisher_ratio/k", [=](const Tensor &t) { return fisher_ratio(u, t, 1e-8); }, k);
  }
  {
    const Tensor x = random_tensor({2, 1, 5, 6}, rng);
    const Tensor r = weights_like(2 * 3 * 3, rng);
    check("crop2d_mirror/x",
          [=](const Tensor &t) { return project(crop2d(t, 1, 2, 3, 3, true), r); }, x);
  }
  {
    const Tensor a = random_tensor({2, 3, 2}, rng);
    const Tensor b = random_tensor({2, 1, 2}, rng);
    const Tensor r = weights_like(2 * 2 * 2, rng);
    check("concat>narrow/a",
          [=](const Tensor &t) { return project(narrow(concat({t, b}, 1), 1, 2, 2), r); }, a);
    check("concat>narrow/b",
          [=](const Tensor &t) { return project(narrow(concat({a, t}, 1), 1, 2, 2), r); }, b);
  }
  {
    const Tensor a = random_tensor({3, 2}, rng);
    const Tensor b = random_tensor({3, 2}, rng);
    const Tensor r = weights_like(6, rng);
    check("add>sub>mul>scale>square/a",
          [=](const Tensor &t) {
            return project(square(scale(mul(sub(add(t, b), b), t), 0.5)), r);
          },
          a);
  }
  return out;
}

double conv_adjoint_error(std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                          std::size_t side, std::size_t kernel, std::size_t stride,
                          std::size_t pad, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard no_grad;
  const Tensor x = random_tensor({batch, in_channels, side, side}, rng);
  const Tensor w = random_tensor({out_channels, in_channels, kernel, kernel}, rng);
  const Tensor cx = conv2d(x, w, Tensor{}, stride, pad);
  const Tensor y = random_tensor(cx.shape(), rng);
  // Same weight array, read as I×O×K×K with I = conv output channels.
  const Tensor dy = deconv2d(y, w, Tensor{}, stride, pad);
  if (dy.shape() != x.shape())
    throw ShapeError("conv_adjoint_error: geometry is not invertible, deconv gives " +
                     shape_str(dy.shape()) + " for input " + shape_str(x.shape()));
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.numel(); ++i)
    lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i)
    rhs += x[i] * dy[i];
  return std::abs(lhs - rhs);
}

std::vector<AdjointResult> run_adjoint_suite(std::uint64_t seed) {
  std::vector<AdjointResult> out;
  // Encoder geometry (k3 s2 p1), decoder geometry (k4 s2 p1), 1×1 heads, and
  // a plain stride-1 case.
  out.push_back({"k3s2p1", conv_adjoint_error(2, 3, 4, 7, 3, 2, 1, seed)});
  out.push_back({"k4s2p1", conv_adjoint_error(2, 3, 4, 8, 4, 2, 1, seed + 1)});
  out.push_back({"k1s1p0", conv_adjoint_error(2, 5, 3, 4, 1, 1, 0, seed + 2)});
  out.push_back({"k3s1p1", conv_adjoint_error(1, 2, 2, 6, 3, 1, 1, seed + 3)});
  out.push_back({"k3s2p1_wide", conv_adjoint_error(1, 1, 2, 9, 3, 2, 1, seed + 4)});
  return out;
}

} // namespace kecae
