#include "kecae/data.hpp"

#include "kecae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace kecae {

std::string grade_name(Grade g) { return g == Grade::kl0 ? "kl0" : "kl2"; }

Grade parse_grade(const std::string &s) {
  if (s == "kl0" || s == "KL-0" || s == "0")
    return Grade::kl0;
  if (s == "kl2" || s == "KL-2" || s == "2")
    return Grade::kl2;
  throw DataError("unknown class '" + s + "' (expected kl0 or kl2)");
}

Image flip_horizontal(const Image &img) {
  Image out(img.side);
  for (std::size_t r = 0; r < img.side; ++r)
    for (std::size_t c = 0; c < img.side; ++c)
      out.at(r, c) = img.at(r, img.side - 1 - c);
  return out;
}

Image resize(const Image &img, std::size_t side) {
  if (side == img.side)
    return img;
  if (img.side == 0 || side == 0)
    throw DataError("resize: empty image");
  Image out(side);
  const double scale = static_cast<double>(img.side) / static_cast<double>(side);
  const double hi = static_cast<double>(img.side - 1);
  for (std::size_t r = 0; r < side; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * scale - 0.5, 0.0, hi);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, img.side - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < side; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * scale - 0.5, 0.0, hi);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, img.side - 1);
      const double fx = x - static_cast<double>(x0);
      out.at(r, c) = (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
                     fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
    }
  }
  return out;
}

std::pair<double, double> gap_range(Grade grade, std::size_t side) {
  const double s = static_cast<double>(side);
  return grade == Grade::kl0 ? std::pair{0.18 * s, 0.28 * s} : std::pair{0.06 * s, 0.12 * s};
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSupersample = 4;

// Background parameters shared by both grades for a given seed.
struct Scene {
  double centre;        // joint line row
  double bone, tissue;  // intensities
  double left, right;   // bone margins (columns)
  double top_amp, top_freq, top_phase;
  double bot_amp, bot_freq, bot_phase;
  double tilt;          // horizontal illumination gradient
  double tex_amp[2], tex_fx[2], tex_fy[2], tex_phase[2];
  double osteo_sigma;   // vertical extent of the marginal bumps
};

Scene draw_scene(Rng &rng, double s) {
  Scene sc{};
  sc.centre = 0.5 * s + rng.uniform(-0.04 * s, 0.04 * s);
  sc.bone = rng.uniform(0.62, 0.82);
  sc.tissue = rng.uniform(0.12, 0.28);
  sc.left = rng.uniform(0.08 * s, 0.14 * s);
  sc.right = s - rng.uniform(0.08 * s, 0.14 * s);
  sc.top_amp = rng.uniform(0.0, 0.01 * s);
  sc.top_freq = rng.uniform(0.5, 1.5);
  sc.top_phase = rng.uniform(0.0, kTwoPi);
  sc.bot_amp = rng.uniform(0.0, 0.01 * s);
  sc.bot_freq = rng.uniform(0.5, 1.5);
  sc.bot_phase = rng.uniform(0.0, kTwoPi);
  sc.tilt = rng.uniform(-0.05, 0.05);
  for (int i = 0; i < 2; ++i) {
    sc.tex_amp[i] = rng.uniform(0.005, 0.015);
    sc.tex_fx[i] = rng.uniform(2.0, 5.0);
    sc.tex_fy[i] = rng.uniform(-4.0, 4.0);
    sc.tex_phase[i] = rng.uniform(0.0, kTwoPi);
  }
  sc.osteo_sigma = rng.uniform(0.05 * s, 0.08 * s);
  return sc;
}

} // namespace

SynthImage synth_generate(Grade grade, std::uint64_t seed, std::size_t side,
                          const SynthOptions &opts) {
  if (side < 32)
    throw DataError("synth_generate: side must be >= 32, got " + std::to_string(side));
  const double s = static_cast<double>(side);

  // Independent streams: scene (class-free), class attributes, pixel noise.
  Rng scene_rng(derive_seed(seed, 1));
  Rng class_rng(derive_seed(seed, 2, static_cast<std::uint64_t>(grade)));
  Rng noise_rng(derive_seed(seed, 3));

  const Scene sc = draw_scene(scene_rng, s);
  const auto [glo, ghi] = gap_range(grade, side);
  const double gap = class_rng.uniform(glo, ghi);
  const double amp = grade == Grade::kl2 ? class_rng.uniform(0.02 * s, 0.05 * s) : 0.0;

  auto top_edge = [&](double x) {
    return sc.centre - 0.5 * gap + sc.top_amp * std::sin(kTwoPi * sc.top_freq * x / s + sc.top_phase);
  };
  auto bot_edge = [&](double x) {
    return sc.centre + 0.5 * gap + sc.bot_amp * std::sin(kTwoPi * sc.bot_freq * x / s + sc.bot_phase);
  };
  // Reach of the bone beyond its margins at row y: bumps hug the joint-side
  // corner of each bone and fade away from the joint.
  auto spur = [&](double y) {
    if (amp == 0.0)
      return 0.0;
    const double yt = sc.centre - 0.5 * gap, yb = sc.centre + 0.5 * gap;
    const double d = y < sc.centre ? yt - y : y - yb;
    if (d < 0.0)
      return 0.0;
    return amp * std::exp(-(d * d) / (sc.osteo_sigma * sc.osteo_sigma));
  };
  auto is_bone = [&](double y, double x) {
    const double reach = spur(y);
    if (x < sc.left - reach || x > sc.right + reach)
      return false;
    return y < top_edge(x) || y > bot_edge(x);
  };

  SynthImage out;
  out.grade = grade;
  out.gap_width = gap;
  out.osteo_amp = amp;
  out.seed = seed;
  out.image = Image(side);
  const double step = 1.0 / kSupersample;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double acc = 0.0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        const double y = static_cast<double>(r) + (sy + 0.5) * step;
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double x = static_cast<double>(c) + (sx + 0.5) * step;
          if (is_bone(y, x)) {
            double tex = 0.0;
            for (int i = 0; i < 2; ++i)
              tex += sc.tex_amp[i] *
                     std::sin(kTwoPi * (sc.tex_fx[i] * x + sc.tex_fy[i] * y) / s + sc.tex_phase[i]);
            acc += sc.bone + tex;
          } else {
            acc += sc.tissue;
          }
        }
      }
      double v = acc / (kSupersample * kSupersample);
      v += sc.tilt * ((static_cast<double>(c) + 0.5) / s - 0.5);
      if (opts.noise)
        v += opts.noise_sigma * noise_rng.normal();
      out.image.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

SplitSet generate_items(std::size_t per_class, std::size_t side, std::uint64_t seed,
                        const SynthOptions &opts) {
  SplitSet set;
  for (Grade g : {Grade::kl0, Grade::kl2}) {
    auto &dst = set.of(g);
    dst.reserve(per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(g) + 1, i);
      SynthImage si = synth_generate(g, item_seed, side, opts);
      char id[48];
      std::snprintf(id, sizeof id, "%s_%06zu", grade_name(g).c_str(), i);
      Item it;
      it.id = id;
      it.source = id;
      it.grade = g;
      it.gap_width = si.gap_width;
      it.osteo_amp = si.osteo_amp;
      it.seed = item_seed;
      it.image = std::move(si.image);
      dst.push_back(std::move(it));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------

std::size_t patch_side(std::size_t image_side) {
  return static_cast<std::size_t>(std::floor(0.43 * static_cast<double>(image_side)));
}

PatchPair extract_patches(const Image &img) {
  const std::size_t p = patch_side(img.side);
  if (img.side < 8 || p < 3)
    throw DataError("extract_patches: image side " + std::to_string(img.side) +
                    " too small for patch extraction");
  const std::size_t top = (img.side - p) / 2;
  PatchPair out{Image(p), Image(p)};
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) {
      out.lateral.at(r, c) = img.at(top + r, c);
      out.medial.at(r, c) = img.at(top + r, img.side - 1 - c);
    }
  return out;
}

Image augment(const Image &img, Rng &rng, const AugmentOptions &opts) {
  // Fixed draw order keeps the stream aligned whether or not a step fires.
  const bool do_rot = rng.bernoulli(opts.probability);
  const double angle = rng.uniform(-opts.max_rotation_deg, opts.max_rotation_deg) *
                       std::numbers::pi / 180.0;
  const bool do_bright = rng.bernoulli(opts.probability);
  const double shift = rng.uniform(-opts.max_brightness, opts.max_brightness);
  const bool do_contrast = rng.bernoulli(opts.probability);
  const double gain = 1.0 + rng.uniform(-opts.max_contrast, opts.max_contrast);

  const std::size_t n = img.side;
  Image out = img;
  if (do_rot) {
    const double cx = 0.5 * static_cast<double>(n - 1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto sample = [&](double y, double x) {
      y = std::clamp(y, 0.0, static_cast<double>(n - 1));
      x = std::clamp(x, 0.0, static_cast<double>(n - 1));
      const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
      const std::size_t y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
      const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
      return (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
             fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
    };
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double dy = static_cast<double>(r) - cx, dx = static_cast<double>(c) - cx;
        out.at(r, c) = sample(cx + ca * dy - sa * dx, cx + sa * dy + ca * dx);
      }
  }
  if (do_bright)
    for (auto &v : out.pixels)
      v += shift;
  if (do_contrast) {
    double m = 0.0;
    for (double v : out.pixels)
      m += v;
    m /= static_cast<double>(out.pixels.size());
    for (auto &v : out.pixels)
      v = (v - m) * gain + m;
  }
  for (auto &v : out.pixels)
    v = std::clamp(v, 0.0, 1.0);
  return out;
}

} // namespace kecae
