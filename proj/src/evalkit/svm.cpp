#include "kecae/eval.hpp"

#include "kecae/errors.hpp"

#include <cmath>
#include <limits>

namespace kecae {

namespace {

double sq_dist(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double auto_gamma(const FeatureRows &x) {
  const std::size_t d = x.front().size();
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const auto &row : x)
    for (double v : row) {
      sum += v;
      sum2 += v * v;
      ++count;
    }
  const double mean = sum / static_cast<double>(count);
  const double var = sum2 / static_cast<double>(count) - mean * mean;
  return var > 0.0 ? 1.0 / (static_cast<double>(d) * var) : 1.0;
}

} // namespace

double ProbeModel::decision(const std::vector<double> &x) const {
  double f = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i)
    f += coef[i] * std::exp(-gamma * sq_dist(support[i], x));
  return f - bias;
}

int ProbeModel::predict(const std::vector<double> &x) const { return decision(x) > 0.0 ? 1 : 0; }

ProbeModel probe_train(const FeatureRows &x, const std::vector<int> &labels,
                       const ProbeOptions &opts) {
  const std::size_t n = x.size();
  if (n != labels.size())
    throw DataError("probe_train: " + std::to_string(n) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1)
      throw DataError("probe_train: labels must be 0 or 1");
    (l ? pos : neg)++;
  }
  if (pos < 2 || neg < 2)
    throw DataError("probe_train: need at least 2 samples of each class (got " +
                    std::to_string(neg) + " and " + std::to_string(pos) + ")");
  const std::size_t d = x.front().size();
  for (const auto &row : x)
    if (row.size() != d)
      throw DataError("probe_train: rows differ in length");
  if (!(opts.C > 0.0))
    throw UsageError("probe_train: C must be positive");

  ProbeModel model;
  model.C = opts.C;
  model.gamma = opts.gamma > 0.0 ? opts.gamma : auto_gamma(x);

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = labels[i] ? 1.0 : -1.0;
  // Q_ij = y_i y_j K(x_i, x_j), stored in full (probe sets are small).
  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double k = std::exp(-model.gamma * sq_dist(x[i], x[j]));
      q[i * n + j] = q[j * n + i] = y[i] * y[j] * k;
    }

  const double C = opts.C;
  constexpr double kTau = 1e-12;
  std::vector<double> alpha(n, 0.0), grad(n, -1.0);
  auto upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

  std::size_t iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    // Maximal violating pair.
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] > 0) {
        if (!upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          i = t;
        }
        if (!lower(t) && grad[t] >= gmax2) {
          gmax2 = grad[t];
          j = t;
        }
      } else {
        if (!lower(t) && grad[t] >= gmax) {
          gmax = grad[t];
          i = t;
        }
        if (!upper(t) && -grad[t] >= gmax2) {
          gmax2 = -grad[t];
          j = t;
        }
      }
    }
    if (i == n || j == n || gmax + gmax2 < opts.tol)
      break;

    const double *qi = &q[i * n];
    const double *qj = &q[j * n];
    const double old_i = alpha[i], old_j = alpha[j];
    if (y[i] != y[j]) {
      double quad = qi[i] + qj[j] + 2.0 * qi[j];
      if (quad <= 0.0)
        quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = qi[i] + qj[j] - 2.0 * qi[j];
      if (quad <= 0.0)
        quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = sum;
        }
        if (alpha[i] < 0.0) {
          alpha[i] = 0.0;
          alpha[j] = sum;
        }
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    for (std::size_t k = 0; k < n; ++k)
      grad[k] += qi[k] * di + qj[k] * dj;
  }
  model.iterations = iter;

  // Bias from the free vectors, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] < 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  model.bias = n_free ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);

  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0) {
      model.support.push_back(x[t]);
      model.coef.push_back(alpha[t] * y[t]);
    }
  return model;
}

double probe_accuracy(const ProbeModel &m, const FeatureRows &x, const std::vector<int> &labels) {
  if (x.empty())
    return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    hit += m.predict(x[i]) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(x.size());
}

} // namespace kecae
