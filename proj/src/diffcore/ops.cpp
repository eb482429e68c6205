#include "kecae/ops.hpp"

#include "kecae/errors.hpp"

// Always take the blocked GEMM path: the small-size coefficient path
// vectorizes with alignment-dependent peeling, which breaks bit-exact runs.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kecae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Gradient buffer of parent i, or nullptr when that parent takes no gradient.
double *parent_grad(detail::Node &self, std::size_t i) {
  auto &p = self.parents[i];
  if (!p || !p->requires_grad)
    return nullptr;
  return p->grad_buffer().data();
}

const std::vector<double> &parent_values(detail::Node &self, std::size_t i) {
  return self.parents[i]->values;
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor &t, std::size_t rank, const char *op, const char *what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

struct ConvGeometry {
  std::size_t n, c, h, w;    // conv input
  std::size_t k, stride, pad;
  std::size_t ho, wo;        // conv output
};

// Output columns ox with 0 <= ox*stride + kj - pad < w, as [lo, hi).
std::pair<std::size_t, std::size_t> valid_range(std::size_t wo, std::size_t kj, std::size_t stride,
                                                std::size_t pad, std::size_t w) {
  std::size_t lo = 0;
  if (kj < pad)
    lo = (pad - kj + stride - 1) / stride;
  // largest ox with ox*stride + kj - pad <= w - 1
  const long top = static_cast<long>(w) - 1 + static_cast<long>(pad) - static_cast<long>(kj);
  std::size_t hi = top < 0 ? 0 : static_cast<std::size_t>(top) / stride + 1;
  hi = std::min(hi, wo);
  return {std::min(lo, hi), hi};
}

// col[(c*K + ki)*K + kj][b*Ho*Wo + oy*Wo + ox] = x[b][c][oy*s - p + ki][ox*s - p + kj]
void im2col(const double *x, const ConvGeometry &g, double *col) {
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t cols = g.n * plane_out;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double *row = col + ((c * g.k + ki) * g.k + kj) * cols;
        const auto [lo, hi] = valid_range(g.wo, kj, g.stride, g.pad, g.w);
        for (std::size_t b = 0; b < g.n; ++b) {
          const double *src = x + (b * g.c + c) * g.h * g.w;
          double *dst = row + b * plane_out;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            double *d = dst + oy * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h) || lo >= hi) {
              std::fill(d, d + g.wo, 0.0);
              continue;
            }
            const double *s = src + static_cast<std::size_t>(iy) * g.w;
            const std::ptrdiff_t off =
                static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
            std::fill(d, d + lo, 0.0);
            for (std::size_t ox = lo; ox < hi; ++ox)
              d[ox] = s[static_cast<std::ptrdiff_t>(ox * g.stride) + off];
            std::fill(d + hi, d + g.wo, 0.0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col entries back onto x (accumulating).
void col2im(const double *col, const ConvGeometry &g, double *x) {
  const std::size_t plane_out = g.ho * g.wo;
  const std::size_t cols = g.n * plane_out;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double *row = col + ((c * g.k + ki) * g.k + kj) * cols;
        const auto [lo, hi] = valid_range(g.wo, kj, g.stride, g.pad, g.w);
        if (lo >= hi)
          continue;
        for (std::size_t b = 0; b < g.n; ++b) {
          double *dst = x + (b * g.c + c) * g.h * g.w;
          const double *src = row + b * plane_out;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h))
              continue;
            double *d = dst + static_cast<std::size_t>(iy) * g.w;
            const std::ptrdiff_t off =
                static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
            const double *s = src + oy * g.wo;
            for (std::size_t ox = lo; ox < hi; ++ox)
              d[static_cast<std::ptrdiff_t>(ox * g.stride) + off] += s[ox];
          }
        }
      }
    }
  }
}

// N×C×P (batch-major) <-> C×(N·P) (channel-major) permutations.
void batch_to_channel_major(const double *src, std::size_t n, std::size_t c, std::size_t p,
                            double *dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (b * c + ch) * p, p, dst + ch * n * p + b * p);
}

void channel_to_batch_major(const double *src, std::size_t n, std::size_t c, std::size_t p,
                            double *dst, bool accumulate) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double *s = src + ch * n * p + b * p;
      double *d = dst + (b * c + ch) * p;
      if (accumulate)
        for (std::size_t i = 0; i < p; ++i)
          d[i] += s[i];
      else
        std::copy_n(s, p, d);
    }
}

void check_bias(const Tensor &b, std::size_t channels, const char *op) {
  if (b.defined() && (b.rank() != 1 || b.dim(0) != channels))
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(b.shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor &a, const Tensor &b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double *g = parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor &a, const Tensor &b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] - b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i];
    if (double *g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    const auto &av = parent_values(self, 0);
    const auto &bv = parent_values(self, 1);
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * bv[i];
    if (double *g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor &a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node &self) {
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * s;
  });
}

Tensor square(const Tensor &a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * a[i];
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](detail::Node &self) {
    const auto &av = parent_values(self, 0);
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += 2.0 * av[i] * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor &a) {
  double s = 0.0;
  for (double v : a.values())
    s += v;
  return Tensor::make_result({1}, {s}, {a}, [](detail::Node &self) {
    if (double *g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->values.size();
      for (std::size_t i = 0; i < n; ++i)
        g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor &a) {
  double s = 0.0;
  for (double v : a.values())
    s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return Tensor::make_result({1}, {s * inv}, {a}, [inv](detail::Node &self) {
    if (double *g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->values.size();
      for (std::size_t i = 0; i < n; ++i)
        g[i] += self.grad[0] * inv;
    }
  });
}

Tensor weighted_sum(const std::vector<Tensor> &terms, const std::vector<double> &weights) {
  if (terms.size() != weights.size())
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms but " +
                     std::to_string(weights.size()) + " weights");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i)
    s += weights[i] * terms[i].item();
  return Tensor::make_result({1}, {s}, terms, [weights](detail::Node &self) {
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (double *g = parent_grad(self, i))
        g[0] += weights[i] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor &a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](detail::Node &self) {
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty())
    throw ShapeError("concat: no inputs");
  const Shape &ref = parts.front().shape();
  if (axis >= ref.size())
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto &p : parts) {
    if (p.rank() != ref.size())
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d])
        throw ShapeError("concat: axis " + std::to_string(d) + " differs: " +
                         shape_str(p.shape()) + " vs " + shape_str(ref));
    total += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d)
    outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d)
    inner *= ref[d];

  Shape shape = ref;
  shape[axis] = total;
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (const auto &p : parts) {
    const std::size_t block = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * block, block, out.data() + o * total * inner + offset);
    offset += block;
    extents.push_back(p.dim(axis));
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), parts, [extents, outer, inner, total](detail::Node &self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < extents.size(); ++i) {
          const std::size_t block = extents[i] * inner;
          if (double *g = parent_grad(self, i))
            for (std::size_t o = 0; o < outer; ++o) {
              const double *src = self.grad.data() + o * total * inner + offset;
              for (std::size_t j = 0; j < block; ++j)
                g[o * block + j] += src[j];
            }
          offset += block;
        }
      });
}

Tensor narrow(const Tensor &a, std::size_t axis, std::size_t begin, std::size_t length) {
  if (axis >= a.rank())
    throw ShapeError("narrow: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
  if (begin + length > a.dim(axis))
    throw ShapeError("narrow: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") exceeds axis " + std::to_string(axis) +
                     " of " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d)
    outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d)
    inner *= a.dim(d);
  const std::size_t full = a.dim(axis) * inner;
  const std::size_t block = length * inner;
  const std::size_t off = begin * inner;
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> out(outer * block);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.values().data() + o * full + off, block, out.data() + o * block);
  return Tensor::make_result(std::move(shape), std::move(out), {a},
                             [outer, full, block, off](detail::Node &self) {
                               if (double *g = parent_grad(self, 0))
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t j = 0; j < block; ++j)
                                     g[o * full + off + j] += self.grad[o * block + j];
                             });
}

Tensor crop2d(const Tensor &x, std::size_t top, std::size_t left, std::size_t height,
              std::size_t width, bool mirror) {
  require_rank(x, 4, "crop2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (top + height > h || left + width > w)
    throw ShapeError("crop2d: window rows [" + std::to_string(top) + ", " +
                     std::to_string(top + height) + ") cols [" + std::to_string(left) + ", " +
                     std::to_string(left + width) + ") exceeds " + shape_str(x.shape()));
  std::vector<double> out(n * c * height * width);
  auto src_index = [=](std::size_t plane, std::size_t y, std::size_t xx) {
    const std::size_t sx = left + (mirror ? width - 1 - xx : xx);
    return plane * h * w + (top + y) * w + sx;
  };
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx)
        out[(p * height + y) * width + xx] = x[src_index(p, y, xx)];
  return Tensor::make_result({n, c, height, width}, std::move(out), {x},
                             [=](detail::Node &self) {
                               if (double *g = parent_grad(self, 0))
                                 for (std::size_t p = 0; p < n * c; ++p)
                                   for (std::size_t y = 0; y < height; ++y)
                                     for (std::size_t xx = 0; xx < width; ++xx)
                                       g[src_index(p, y, xx)] +=
                                           self.grad[(p * height + y) * width + xx];
                             });
}

// ---------------------------------------------------------------------------
// Convolutions

Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (stride < 1)
    throw ShapeError("conv2d: stride must be >= 1");
  if (w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input channel axis 1 of x " + shape_str(x.shape()) +
                     " != weight axis 1 of " + shape_str(w.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k)
    throw ShapeError("conv2d: spatial axes 2,3 of " + shape_str(x.shape()) +
                     " smaller than kernel " + std::to_string(g.k));
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  const std::size_t o = w.dim(0);
  check_bias(b, o, "conv2d");

  const std::size_t ckk = g.c * g.k * g.k;
  const std::size_t np = g.n * g.ho * g.wo;
  std::vector<double> col(ckk * np);
  im2col(x.values().data(), g, col.data());
  std::vector<double> y(o * np);
  MapMat(y.data(), o, np).noalias() =
      ConstMapMat(w.values().data(), o, ckk) * ConstMapMat(col.data(), ckk, np);

  std::vector<double> out(g.n * o * g.ho * g.wo);
  channel_to_batch_major(y.data(), g.n, o, g.ho * g.wo, out.data(), false);
  if (b.defined())
    for (std::size_t bi = 0; bi < g.n; ++bi)
      for (std::size_t oc = 0; oc < o; ++oc) {
        double *d = out.data() + (bi * o + oc) * g.ho * g.wo;
        for (std::size_t i = 0; i < g.ho * g.wo; ++i)
          d[i] += b[oc];
      }

  return Tensor::make_result({g.n, o, g.ho, g.wo}, std::move(out), {x, w, b},
                             [g, o, ckk, np](detail::Node &self) {
                               std::vector<double> dy(o * np);
                               batch_to_channel_major(self.grad.data(), g.n, o, g.ho * g.wo,
                                                      dy.data());
                               ConstMapMat dym(dy.data(), o, np);
                               const auto &xv = parent_values(self, 0);
                               const auto &wv = parent_values(self, 1);
                               if (double *gw = parent_grad(self, 1)) {
                                 std::vector<double> col(ckk * np);
                                 im2col(xv.data(), g, col.data());
                                 MapMat(gw, o, ckk).noalias() +=
                                     dym * ConstMapMat(col.data(), ckk, np).transpose();
                               }
                               if (double *gb = parent_grad(self, 2))
                                 for (std::size_t oc = 0; oc < o; ++oc) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < np; ++i)
                                     acc += dy[oc * np + i];
                                   gb[oc] += acc;
                                 }
                               if (double *gx = parent_grad(self, 0)) {
                                 std::vector<double> dcol(ckk * np);
                                 MapMat(dcol.data(), ckk, np).noalias() =
                                     ConstMapMat(wv.data(), o, ckk).transpose() * dym;
                                 col2im(dcol.data(), g, gx);
                               }
                             });
}

Tensor deconv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride,
                std::size_t pad) {
  require_rank(x, 4, "deconv2d", "input");
  require_rank(w, 4, "deconv2d", "weight");
  if (stride < 1)
    throw ShapeError("deconv2d: stride must be >= 1");
  if (w.dim(2) != w.dim(3))
    throw ShapeError("deconv2d: kernel must be square, got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(0))
    throw ShapeError("deconv2d: input channel axis 1 of x " + shape_str(x.shape()) +
                     " != weight axis 0 of " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(1), k = w.dim(2);
  const long ho_l = static_cast<long>((h - 1) * stride + k) - 2 * static_cast<long>(pad);
  const long wo_l = static_cast<long>((wd - 1) * stride + k) - 2 * static_cast<long>(pad);
  if (ho_l < 1 || wo_l < 1)
    throw ShapeError("deconv2d: non-positive output extent for input " + shape_str(x.shape()));
  check_bias(b, co, "deconv2d");
  // Geometry of the conv whose input-gradient this op computes.
  ConvGeometry g{n, co, static_cast<std::size_t>(ho_l), static_cast<std::size_t>(wo_l), k,
                 stride, pad, h, wd};
  const std::size_t okk = co * k * k;
  const std::size_t np = n * h * wd;

  std::vector<double> xm(ci * np);
  batch_to_channel_major(x.values().data(), n, ci, h * wd, xm.data());
  std::vector<double> col(okk * np);
  MapMat(col.data(), okk, np).noalias() =
      ConstMapMat(w.values().data(), ci, okk).transpose() * ConstMapMat(xm.data(), ci, np);
  std::vector<double> out(n * co * g.h * g.w, 0.0);
  col2im(col.data(), g, out.data());
  if (b.defined())
    for (std::size_t bi = 0; bi < n; ++bi)
      for (std::size_t oc = 0; oc < co; ++oc) {
        double *d = out.data() + (bi * co + oc) * g.h * g.w;
        for (std::size_t i = 0; i < g.h * g.w; ++i)
          d[i] += b[oc];
      }

  return Tensor::make_result(
      {n, co, g.h, g.w}, std::move(out), {x, w, b},
      [g, ci, okk, np](detail::Node &self) {
        const auto &wv = parent_values(self, 1);
        std::vector<double> dcol(okk * np);
        im2col(self.grad.data(), g, dcol.data());
        ConstMapMat dcm(dcol.data(), okk, np);
        if (double *gx = parent_grad(self, 0)) {
          std::vector<double> dx(ci * np);
          MapMat(dx.data(), ci, np).noalias() = ConstMapMat(wv.data(), ci, okk) * dcm;
          channel_to_batch_major(dx.data(), g.n, ci, g.ho * g.wo, gx, true);
        }
        if (double *gw = parent_grad(self, 1)) {
          const auto &xv = parent_values(self, 0);
          std::vector<double> xm(ci * np);
          batch_to_channel_major(xv.data(), g.n, ci, g.ho * g.wo, xm.data());
          MapMat(gw, ci, okk).noalias() += ConstMapMat(xm.data(), ci, np) * dcm.transpose();
        }
        if (double *gb = parent_grad(self, 2)) {
          const std::size_t plane = g.h * g.w;
          for (std::size_t bi = 0; bi < g.n; ++bi)
            for (std::size_t oc = 0; oc < g.c; ++oc) {
              const double *d = self.grad.data() + (bi * g.c + oc) * plane;
              double s = 0.0;
              for (std::size_t i = 0; i < plane; ++i)
                s += d[i];
              gb[oc] += s;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalisation and activations

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0)) {}

Tensor batchnorm2d(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                   BatchNormState &state, Mode mode, double eps, double momentum) {
  if (x.rank() != 2 && x.rank() != 4)
    throw ShapeError("batchnorm2d: input must be N×C or N×C×H×W, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c)
    throw ShapeError("batchnorm2d: parameters do not match channel axis 1 of " +
                     shape_str(x.shape()));
  const std::size_t m = n * plane;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> invstd(c);

  if (mode == Mode::train) {
    if (m < 2)
      throw ShapeError("batchnorm2d: degenerate batch, only " + std::to_string(m) +
                       " element per channel in train mode for " + shape_str(x.shape()));
    auto rm = state.running_mean.values();
    auto rv = state.running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i)
          s += xv[(b * c + ch) * plane + i];
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = xv[(b * c + ch) * plane + i] - mu;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(m);
      invstd[ch] = 1.0 / std::sqrt(var + eps);
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (1.0 - momentum) * rv[ch] +
               momentum * ss / static_cast<double>(m - 1);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = (b * c + ch) * plane + i;
          xhat[idx] = (xv[idx] - mu) * invstd[ch];
          out[idx] = gamma[ch] * xhat[idx] + beta[ch];
        }
    }
  } else {
    const auto rm = state.running_mean.values();
    const auto rv = state.running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      invstd[ch] = 1.0 / std::sqrt(rv[ch] + eps);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = (b * c + ch) * plane + i;
          xhat[idx] = (xv[idx] - rm[ch]) * invstd[ch];
          out[idx] = gamma[ch] * xhat[idx] + beta[ch];
        }
    }
  }

  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, plane, m, batch_stats, xhat = std::move(xhat),
       invstd = std::move(invstd)](detail::Node &self) {
        const auto &gv = parent_values(self, 1);
        double *gx = parent_grad(self, 0);
        double *gg = parent_grad(self, 1);
        double *gbeta = parent_grad(self, 2);
        const auto &dy = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = (b * c + ch) * plane + i;
              sum_dy += dy[idx];
              sum_dy_xhat += dy[idx] * xhat[idx];
            }
          if (gg)
            gg[ch] += sum_dy_xhat;
          if (gbeta)
            gbeta[ch] += sum_dy;
          if (!gx)
            continue;
          const double k = gv[ch] * invstd[ch];
          if (batch_stats) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t idx = (b * c + ch) * plane + i;
                gx[idx] += k * (dy[idx] - inv_m * sum_dy - xhat[idx] * inv_m * sum_dy_xhat);
              }
          } else {
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t idx = (b * c + ch) * plane + i;
                gx[idx] += k * dy[idx];
              }
          }
        }
      });
}

Tensor leaky_relu(const Tensor &x, double slope) {
  std::vector<double> out(x.numel());
  const double *xv = x.values().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [slope](detail::Node &self) {
    const double *xv = parent_values(self, 0).data();
    const double *dy = self.grad.data();
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += dy[i] * (xv[i] >= 0.0 ? 1.0 : slope);
  });
}

Tensor global_avg_pool(const Tensor &x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (plane == 0)
    throw ShapeError("global_avg_pool: empty spatial plane in " + shape_str(x.shape()));
  std::vector<double> out(nc);
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
      s += x[p * plane + i];
    out[p] = s / static_cast<double>(plane);
  }
  return Tensor::make_result({x.dim(0), x.dim(1)}, std::move(out), {x},
                             [nc, plane](detail::Node &self) {
                               if (double *g = parent_grad(self, 0)) {
                                 const double inv = 1.0 / static_cast<double>(plane);
                                 for (std::size_t p = 0; p < nc; ++p)
                                   for (std::size_t i = 0; i < plane; ++i)
                                     g[p * plane + i] += self.grad[p] * inv;
                               }
                             });
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("linear: feature axis 1 of x " + shape_str(x.shape()) +
                     " != axis 1 of weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  check_bias(b, o, "linear");
  std::vector<double> out(n * o);
  MapMat(out.data(), n, o).noalias() =
      ConstMapMat(x.values().data(), n, f) * ConstMapMat(w.values().data(), o, f).transpose();
  if (b.defined())
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < o; ++j)
        out[r * o + j] += b[j];
  return Tensor::make_result({n, o}, std::move(out), {x, w, b}, [n, f, o](detail::Node &self) {
    ConstMapMat dy(self.grad.data(), n, o);
    if (double *gx = parent_grad(self, 0))
      MapMat(gx, n, f).noalias() += dy * ConstMapMat(parent_values(self, 1).data(), o, f);
    if (double *gw = parent_grad(self, 1))
      MapMat(gw, o, f).noalias() +=
          dy.transpose() * ConstMapMat(parent_values(self, 0).data(), n, f);
    if (double *gb = parent_grad(self, 2))
      for (std::size_t j = 0; j < o; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r)
          acc += self.grad[r * o + j];
        gb[j] += acc;
      }
  });
}

// ---------------------------------------------------------------------------
// Losses

std::vector<double> softmax_rows(const Tensor &logits) {
  require_rank(logits, 2, "softmax_rows", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j)
      mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      z += std::exp(logits[r * k + j] - mx);
    for (std::size_t j = 0; j < k; ++j)
      p[r * k + j] = std::exp(logits[r * k + j] - mx) / z;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor &logits, const std::vector<int> &labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw DataError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                      std::to_string(k) + ")");
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j)
      mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      z += std::exp(logits[r * k + j] - mx);
    total += mx + std::log(z) - logits[r * k + static_cast<std::size_t>(labels[r])];
  }
  return Tensor::make_result({1}, {total / static_cast<double>(n)}, {logits},
                             [labels, n, k](detail::Node &self) {
                               double *g = parent_grad(self, 0);
                               if (!g)
                                 return;
                               const Tensor view = Tensor::from(
                                   {n, k}, self.parents[0]->values);
                               const auto p = softmax_rows(view);
                               const double s = self.grad[0] / static_cast<double>(n);
                               for (std::size_t r = 0; r < n; ++r)
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const double onehot =
                                       static_cast<std::size_t>(labels[r]) == j ? 1.0 : 0.0;
                                   g[r * k + j] += s * (p[r * k + j] - onehot);
                                 }
                             });
}

Tensor mse(const Tensor &a, const Tensor &b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return Tensor::make_result({1}, {s * inv}, {a, b}, [n, inv](detail::Node &self) {
    const auto &av = parent_values(self, 0);
    const auto &bv = parent_values(self, 1);
    const double k = 2.0 * inv * self.grad[0];
    if (double *g = parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        g[i] += k * (av[i] - bv[i]);
    if (double *g = parent_grad(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        g[i] -= k * (av[i] - bv[i]);
  });
}

Tensor fisher_ratio(const Tensor &u, const Tensor &k, double eps) {
  require_same_shape(u, k, "fisher_ratio");
  if (u.rank() < 1 || u.dim(0) == 0)
    throw ShapeError("fisher_ratio: need at least one row, got " + shape_str(u.shape()));
  const std::size_t n = u.dim(0);
  const std::size_t f = u.numel() / n;
  if (f == 0)
    throw ShapeError("fisher_ratio: empty feature rows in " + shape_str(u.shape()));
  struct RowStats {
    double mu_u, mu_k, var_sum, denom;
  };
  std::vector<RowStats> stats(n);
  double total = 0.0;
  const double inv_f = 1.0 / static_cast<double>(f);
  for (std::size_t r = 0; r < n; ++r) {
    const double *ur = u.values().data() + r * f;
    const double *kr = k.values().data() + r * f;
    double su = 0.0, sk = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      su += ur[i];
      sk += kr[i];
    }
    const double mu_u = su * inv_f, mu_k = sk * inv_f;
    double vu = 0.0, vk = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      vu += (ur[i] - mu_u) * (ur[i] - mu_u);
      vk += (kr[i] - mu_k) * (kr[i] - mu_k);
    }
    const double var_sum = (vu + vk) * inv_f;
    const double gap = mu_u - mu_k;
    const double denom = gap * gap + eps;
    if (denom == 0.0)
      throw std::domain_error("fisher_ratio: identical means with eps = 0 (row " +
                              std::to_string(r) + ")");
    stats[r] = {mu_u, mu_k, var_sum, denom};
    total += var_sum / denom;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Tensor::make_result(
      {1}, {total * inv_n}, {u, k},
      [n, f, inv_f, inv_n, stats = std::move(stats)](detail::Node &self) {
        const auto &uv = parent_values(self, 0);
        const auto &kv = parent_values(self, 1);
        double *gu = parent_grad(self, 0);
        double *gk = parent_grad(self, 1);
        const double up = self.grad[0] * inv_n;
        for (std::size_t r = 0; r < n; ++r) {
          const auto &s = stats[r];
          const double gap = s.mu_u - s.mu_k;
          // d ratio / d gap, spread evenly over the row by the mean's 1/F.
          const double dgap = -s.var_sum * 2.0 * gap / (s.denom * s.denom) * inv_f;
          const double dvar = 2.0 * inv_f / s.denom;
          for (std::size_t i = 0; i < f; ++i) {
            const std::size_t idx = r * f + i;
            if (gu)
              gu[idx] += up * (dvar * (uv[idx] - s.mu_u) + dgap);
            if (gk)
              gk[idx] += up * (dvar * (kv[idx] - s.mu_k) - dgap);
          }
        }
      });
}

} // namespace kecae
