#pragma once

#include "kecae/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace kecae {

using ScalarFn = std::function<Tensor(const Tensor &)>;

/// Compares the reverse-mode gradient of scalar-valued `f` at `x` with central
/// differences of step `h`, element by element. Returns the largest
/// |a - b| / max(|a|, |b|, 1e-8).
double finite_diff_gradcheck(const ScalarFn &f, const Tensor &x, double h = 1e-5);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

/// Gradient checks for every differentiable primitive, each with respect to
/// each of its inputs, at small shapes with a fixed seed.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 1);

/// |<conv(x), y> - <x, deconv(y)>| for random tensors with the given geometry,
/// b = 0 and the same weight array on both sides.
double conv_adjoint_error(std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                          std::size_t side, std::size_t kernel, std::size_t stride,
                          std::size_t pad, std::uint64_t seed);

struct AdjointResult {
  std::string name;
  double error = 0.0;
};

/// Adjointness over the conv/deconv configurations the networks use.
std::vector<AdjointResult> run_adjoint_suite(std::uint64_t seed = 1);

} // namespace kecae
