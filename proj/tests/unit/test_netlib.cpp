#include <doctest.h>

#include "kecae/data.hpp"
#include "kecae/errors.hpp"
#include "kecae/gradcheck.hpp"
#include "kecae/net.hpp"

#include <set>

using namespace kecae;

namespace {

Tensor rand_images(std::size_t n, std::size_t side, Rng &rng) {
  std::vector<double> v(n * side * side);
  for (auto &x : v)
    x = rng.uniform();
  return Tensor::from({n, 1, side, side}, std::move(v));
}

Tensor randn(Shape shape, Rng &rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

bool same_values(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i])
      return false;
  return true;
}

} // namespace

TEST_CASE("desk preset shapes") {
  const ArchConfig arch = ArchConfig::desk();
  CHECK(arch.input_side == 64);
  CHECK(arch.block_channels == std::vector<std::size_t>{16, 32, 64, 64, 128, 128});
  CHECK(arch.latent_depth == 64);
  CHECK(arch.latent_side() == 1);
  CHECK(arch.patch_side() == 27);

  KeCaeModel m(arch, 3);
  Rng rng(5);
  const Tensor x = rand_images(1, 64, rng);
  const LatentPair p = m.encoder.encode(x, Mode::eval);
  CHECK(p.hU.shape() == Shape{1, 64, 1, 1});
  CHECK(p.hK.shape() == Shape{1, 64, 1, 1});
  const Tensor y = m.decoder.decode(fuse(p), Mode::eval);
  CHECK(y.shape() == x.shape());

  // Same input twice in eval mode: identical latents.
  const LatentPair q = m.encoder.encode(x, Mode::eval);
  CHECK(same_values(p.hU, q.hU));
  CHECK(same_values(p.hK, q.hK));

  CHECK_THROWS_AS(m.encoder.encode(rand_images(1, 32, rng), Mode::eval), ShapeError);
  CHECK_THROWS_AS(m.decoder.decode(Tensor::zeros({1, 32, 1, 1}), Mode::eval), ShapeError);
}

TEST_CASE("paper-preset channel schedule on a 128 px input reaches a 1x1 latent") {
  ArchConfig arch = ArchConfig::paper();
  CHECK(arch.block_channels == std::vector<std::size_t>{32, 64, 128, 256, 512, 1024, 2048});
  CHECK(arch.input_side == 256);
  CHECK(arch.latent_side() == 2);
  arch.input_side = 128;
  CHECK(arch.latent_side() == 1);
  Rng rng(1);
  Encoder enc(arch, rng);
  const LatentPair p = enc.encode(rand_images(1, 128, rng), Mode::eval);
  CHECK(p.hU.shape() == Shape{1, 2048, 1, 1});
  CHECK(p.hK.shape() == p.hU.shape());
}

TEST_CASE("arch validation") {
  ArchConfig a = ArchConfig::desk();
  a.input_side = 96; // 96 / 64 is not an integer
  CHECK_THROWS_AS(a.validate(), UsageError);
  a = ArchConfig::desk();
  a.block_channels = {8, 8, 8};
  a.input_side = 32;
  CHECK_NOTHROW(a.validate());
  CHECK(a.latent_side() == 4);
  CHECK_THROWS_AS(ArchConfig::from_preset("huge"), UsageError);
}

TEST_CASE("round-trip shape holds for several geometries") {
  for (const auto &[side, chans] :
       std::vector<std::pair<std::size_t, std::vector<std::size_t>>>{
           {32, {4, 8}}, {32, {4, 8, 8}}, {64, {4, 4, 8, 8}}, {16, {2, 2, 2, 2}}}) {
    ArchConfig a;
    a.input_side = side;
    a.block_channels = chans;
    a.latent_depth = 6;
    a.disc_channels = {4, 4};
    KeCaeModel m(a, 11);
    Rng rng(side);
    const Tensor x = rand_images(2, side, rng);
    const LatentPair p = m.encoder.encode(x, Mode::eval);
    CHECK(p.hU.dim(2) == a.latent_side());
    CHECK(m.decoder.decode(fuse(p), Mode::eval).shape() == x.shape());
  }
}

TEST_CASE("fuse examples") {
  const Tensor u = Tensor::from({2}, {1, 2});
  const Tensor k = Tensor::from({2}, {3, 4});
  const Tensor f = fuse({u, k});
  CHECK(f[0] == 4.0);
  CHECK(f[1] == 6.0);
  CHECK(same_values(fuse({Tensor::zeros({2}), k}), k));
  CHECK(same_values(fuse({u, k}), fuse({k, u})));
  CHECK_THROWS_AS(fuse({Tensor::zeros({2}), Tensor::zeros({3})}), ShapeError);
}

TEST_CASE("exchange examples and properties") {
  Rng rng(9);
  const Shape s{3, 4, 2, 2};
  const LatentPair p1{randn(s, rng), randn(s, rng)};
  const LatentPair p2{randn(s, rng), randn(s, rng)};

  {
    const auto [a, b] = exchange(p1, p1);
    CHECK(same_values(a, fuse(p1)));
    CHECK(same_values(b, fuse(p1)));
  }
  {
    const LatentPair z1{Tensor::zeros(s), p1.hK}, z2{Tensor::zeros(s), p2.hK};
    const auto [a, b] = exchange(z1, z2);
    CHECK(same_values(a, p2.hK));
    CHECK(same_values(b, p1.hK));
  }
  {
    // Swapping the key parts back restores the original fusions.
    const LatentPair q1{p1.hU, p2.hK}, q2{p2.hU, p1.hK};
    const auto [a, b] = exchange(q1, q2);
    CHECK(same_values(a, fuse(p1)));
    CHECK(same_values(b, fuse(p2)));
  }
  {
    // Conservation of latent mass, up to rounding of the reordered sums.
    const auto [a, b] = exchange(p1, p2);
    const Tensor lhs = add(a, b), rhs = add(fuse(p1), fuse(p2));
    for (std::size_t i = 0; i < lhs.numel(); ++i)
      CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-14));
  }
  const LatentPair bad{Tensor::zeros({3, 4, 1, 1}), Tensor::zeros({3, 4, 1, 1})};
  CHECK_THROWS_AS(exchange(p1, bad), ShapeError);
}

TEST_CASE("decode gradient passes the finite-difference check") {
  ArchConfig a;
  a.input_side = 16;
  a.block_channels = {3, 4};
  a.latent_depth = 3;
  a.disc_channels = {2};
  Rng rng(21);
  Decoder dec(a, rng);
  const Tensor h = randn({2, 3, 4, 4}, rng);
  // Eval mode keeps the map smooth; train-mode BN is covered by the core suite.
  const double err = finite_diff_gradcheck(
      [&](const Tensor &t) { return mean(dec.decode(t, Mode::eval)); }, h);
  CHECK(err < 1e-4);
}

TEST_CASE("discriminator outputs") {
  const ArchConfig arch = ArchConfig::desk();
  KeCaeModel m(arch, 4);
  Rng rng(8);
  const Tensor imgs = rand_images(3, 64, rng);
  const Tensor pairs = patch_pairs(imgs);
  CHECK(pairs.shape() == Shape{3, 2, 27, 27});
  const DiscOutput out = m.discriminator.discriminate(pairs, Mode::eval);
  CHECK(out.logits.shape() == Shape{3, 2});
  const auto probs = out.probabilities();
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(probs[2 * r] + probs[2 * r + 1] == doctest::Approx(1.0).epsilon(1e-12));

  // Identical patches: both slots carry the same content.
  const Tensor lateral = narrow(pairs, 1, 0, 1);
  const Tensor twin = concat({lateral, lateral}, 1);
  const Tensor la = m.discriminator.discriminate(twin, Mode::eval).logits;
  const Tensor lb = m.discriminator.discriminate(concat({lateral, lateral}, 1), Mode::eval).logits;
  CHECK(same_values(la, lb));

  CHECK_THROWS_AS(m.discriminator.discriminate(Tensor::zeros({3, 3, 27, 27}), Mode::eval),
                  ShapeError);
  CHECK_THROWS_AS(m.discriminator.discriminate(Tensor::zeros({3, 2, 27, 26}), Mode::eval),
                  ShapeError);
}

TEST_CASE("in-graph patches match image patches") {
  Rng rng(2);
  const Tensor imgs = rand_images(2, 64, rng);
  const Tensor pp = patch_pairs(imgs);
  for (std::size_t n = 0; n < 2; ++n) {
    Image img(64);
    for (std::size_t i = 0; i < 64 * 64; ++i)
      img.pixels[i] = imgs[n * 64 * 64 + i];
    const PatchPair ref = extract_patches(img);
    for (std::size_t i = 0; i < 27 * 27; ++i) {
      CHECK(pp[(n * 2 + 0) * 27 * 27 + i] == ref.lateral.pixels[i]);
      CHECK(pp[(n * 2 + 1) * 27 * 27 + i] == ref.medial.pixels[i]);
    }
  }
}

TEST_CASE("parameters split into two disjoint groups") {
  KeCaeModel m(ArchConfig::desk(), 1);
  std::set<std::size_t> gen, disc;
  for (const auto &[name, t] : m.generator_params.params()) {
    CHECK((name.rfind("encoder.", 0) == 0 || name.rfind("decoder.", 0) == 0));
    gen.insert(t.id());
  }
  for (const auto &[name, t] : m.discriminator_params.params()) {
    CHECK(name.rfind("discriminator.", 0) == 0);
    disc.insert(t.id());
  }
  CHECK_FALSE(gen.empty());
  CHECK_FALSE(disc.empty());
  for (auto id : gen)
    CHECK(disc.count(id) == 0);

  // Freezing the discriminator leaves every generator parameter trainable.
  m.discriminator_params.freeze();
  for (const auto &[name, t] : m.generator_params.params())
    CHECK(t.requires_grad());
  for (const auto &[name, t] : m.discriminator_params.params())
    CHECK_FALSE(t.requires_grad());
}

TEST_CASE("generator gradients stay off the discriminator when it is frozen") {
  ArchConfig a;
  a.input_side = 32;
  a.block_channels = {4, 8};
  a.latent_depth = 4;
  a.disc_channels = {4, 4};
  KeCaeModel m(a, 6);
  m.discriminator_params.freeze();
  Rng rng(3);
  const Tensor x = rand_images(4, 32, rng);
  const LatentPair p = m.encoder.encode(x, Mode::train);
  const Tensor y = m.decoder.decode(fuse(p), Mode::train);
  const DiscOutput d = m.discriminator.discriminate(patch_pairs(y), Mode::eval);
  backward(softmax_cross_entropy(d.logits, {0, 1, 0, 1}));
  for (const auto &[name, t] : m.discriminator_params.params())
    CHECK_FALSE(t.has_grad());
  bool any = false;
  for (const auto &[name, t] : m.generator_params.params())
    any = any || t.has_grad();
  CHECK(any);
}
