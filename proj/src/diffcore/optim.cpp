#include "kecae/optim.hpp"

#include "kecae/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace kecae {

void ParamGroup::add_param(const std::string &name, Tensor t) {
  if (params_.count(name) || buffers_.count(name))
    throw std::invalid_argument("ParamGroup '" + name_ + "': duplicate entry '" + name + "'");
  t.set_requires_grad(!frozen_);
  moments_[name] = AdamMoments{std::vector<double>(t.numel(), 0.0),
                               std::vector<double>(t.numel(), 0.0)};
  params_.emplace(name, std::move(t));
}

void ParamGroup::add_buffer(const std::string &name, Tensor t) {
  if (params_.count(name) || buffers_.count(name))
    throw std::invalid_argument("ParamGroup '" + name_ + "': duplicate entry '" + name + "'");
  t.set_requires_grad(false);
  buffers_.emplace(name, std::move(t));
}

void ParamGroup::freeze() {
  frozen_ = true;
  for (auto &[_, t] : params_) {
    t.set_requires_grad(false);
    t.zero_grad();
  }
}

void ParamGroup::unfreeze() {
  frozen_ = false;
  for (auto &[_, t] : params_)
    t.set_requires_grad(true);
}

void ParamGroup::zero_grad() {
  for (auto &[_, t] : params_)
    t.zero_grad();
}

std::size_t ParamGroup::param_count() const {
  std::size_t n = 0;
  for (const auto &[_, t] : params_)
    n += t.numel();
  return n;
}

void adam_step(ParamGroup &group, const AdamOptions &opts) {
  if (group.frozen()) {
    spdlog::warn("adam_step on frozen parameter group '{}' ignored", group.name());
    return;
  }
  group.set_step(group.step() + 1);
  const double t = static_cast<double>(group.step());
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);
  for (const auto &[name, param] : group.params()) {
    if (!param.has_grad())
      continue;
    Tensor p = param;
    auto &mom = group.moments().at(name);
    auto values = p.values();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      mom.m[i] = opts.beta1 * mom.m[i] + (1.0 - opts.beta1) * g;
      mom.v[i] = opts.beta2 * mom.v[i] + (1.0 - opts.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      values[i] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
  }
}

Tensor kaiming_init(Shape shape, std::size_t fan_in, Rng &rng, bool requires_grad) {
  if (fan_in < 1)
    throw std::invalid_argument("kaiming_init: fan_in must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

} // namespace kecae
