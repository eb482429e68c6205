#pragma once

#include "kecae/rng.hpp"
#include "kecae/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace kecae {

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Named parameters updated together, with their Adam state.
///
/// Buffers (batch-norm running statistics) travel with the group for
/// checkpointing but are never touched by the optimizer.
class ParamGroup {
public:
  explicit ParamGroup(std::string name = {}) : name_(std::move(name)) {}

  const std::string &name() const { return name_; }

  /// Registers a parameter; it is marked requires-grad unless the group is frozen.
  void add_param(const std::string &name, Tensor t);
  void add_buffer(const std::string &name, Tensor t);

  const std::map<std::string, Tensor> &params() const { return params_; }
  const std::map<std::string, Tensor> &buffers() const { return buffers_; }
  std::map<std::string, AdamMoments> &moments() { return moments_; }
  const std::map<std::string, AdamMoments> &moments() const { return moments_; }

  /// Frozen parameters stop taking gradients but still pass them through the
  /// ops they feed. Optimizer steps on a frozen group change nothing.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  void zero_grad();

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  std::size_t param_count() const;

private:
  std::string name_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
  std::map<std::string, AdamMoments> moments_;
  bool frozen_ = false;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter with a populated
/// gradient. Parameters without a gradient keep their values and moments.
/// A frozen group is left untouched and a warning is logged.
void adam_step(ParamGroup &group, const AdamOptions &opts);

/// Normal(0, sqrt(2 / fan_in)) samples in a tensor of the given shape.
Tensor kaiming_init(Shape shape, std::size_t fan_in, Rng &rng, bool requires_grad = true);

} // namespace kecae
