#include "kecae/eval.hpp"

#include <algorithm>
#include <cmath>

namespace kecae {

namespace {

constexpr double kMinContrast = 0.05;
constexpr std::size_t kEdgeRows = 3;

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0)
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

// Threshold maximising between-class variance over the sorted profile.
double otsu(const std::vector<double> &values) {
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double total = 0.0;
  for (double x : v)
    total += x;
  double best = -1.0, thr = v.front();
  double below = 0.0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    below += v[k - 1];
    if (v[k] == v[k - 1])
      continue;
    const double w0 = static_cast<double>(k) / n, w1 = 1.0 - w0;
    const double m0 = below / static_cast<double>(k);
    const double m1 = (total - below) / (n - static_cast<double>(k));
    const double score = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (score > best) {
      best = score;
      thr = 0.5 * (v[k - 1] + v[k]);
    }
  }
  return thr;
}

} // namespace

std::optional<double> gap_width_estimate(const Image &img) {
  const std::size_t s = img.side;
  if (s < 8)
    return std::nullopt;
  // Central columns only: bone margins and marginal bumps stay out of the
  // profile. Mirrored columns are added in pairs so a horizontal flip gives
  // bit-identical row means.
  const std::size_t c0 = s / 5;
  std::vector<double> profile(s);
  for (std::size_t r = 0; r < s; ++r) {
    double acc = 0.0;
    for (std::size_t c = c0; c < s / 2; ++c)
      acc += img.at(r, c) + img.at(r, s - 1 - c);
    if (s % 2)
      acc += img.at(r, s / 2);
    profile[r] = acc / static_cast<double>(s - 2 * c0);
  }

  const double thr = otsu(profile);
  std::size_t best_begin = 0, best_len = 0;
  for (std::size_t r = 0; r < s;) {
    if (profile[r] >= thr) {
      ++r;
      continue;
    }
    std::size_t e = r;
    while (e < s && profile[e] < thr)
      ++e;
    if (r > 0 && e < s && e - r > best_len) {
      best_begin = r;
      best_len = e - r;
    }
    r = e;
  }
  if (best_len == 0)
    return std::nullopt;

  std::vector<double> bright, dark;
  for (std::size_t r = 0; r < s; ++r)
    if (profile[r] >= thr)
      bright.push_back(profile[r]);
  dark.assign(profile.begin() + static_cast<std::ptrdiff_t>(best_begin),
              profile.begin() + static_cast<std::ptrdiff_t>(best_begin + best_len));
  const double hi = median(bright), lo = median(dark);
  if (hi - lo < kMinContrast)
    return std::nullopt;

  const std::size_t from = best_begin > kEdgeRows ? best_begin - kEdgeRows : 0;
  const std::size_t to = std::min(s, best_begin + best_len + kEdgeRows);
  double width = 0.0;
  for (std::size_t r = from; r < to; ++r)
    width += std::clamp((hi - profile[r]) / (hi - lo), 0.0, 1.0);
  return width;
}

double range_distance(double v, std::pair<double, double> r) {
  if (v < r.first)
    return r.first - v;
  if (v > r.second)
    return v - r.second;
  return 0.0;
}

} // namespace kecae
