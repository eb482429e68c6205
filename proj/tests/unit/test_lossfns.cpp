#include <doctest.h>

#include "kecae/errors.hpp"
#include "kecae/losses.hpp"

#include <cmath>
#include <numbers>

using namespace kecae;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({1, 1, 1, n}, std::move(v));
}

DiscOutput logits(std::vector<double> v) {
  const std::size_t n = v.size() / 2;
  return {Tensor::from({n, 2}, std::move(v))};
}

} // namespace

TEST_CASE("j_mse hand examples") {
  const Tensor x1 = row({1, 2}), xh1 = row({2, 4}), x2 = row({0.5, -3});
  CHECK(j_mse(x1, xh1, x2, x2).item() == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(std::abs(j_mse(x1, xh1, x2, x2).item() - 2.5) < 1e-9);
  CHECK(j_mse(x1, x1, x2, x2).item() == 0.0);
  // Pair order does not matter.
  CHECK(j_mse(x1, xh1, x2, row({0, 0})).item() == j_mse(x2, row({0, 0}), x1, xh1).item());
  CHECK_THROWS_AS(j_mse(x1, row({1, 2, 3}), x2, x2), ShapeError);
}

TEST_CASE("j_ce hand examples") {
  // Equal logits give p = 0.5 for either label.
  const DiscOutput uniform = logits({0.3, 0.3, -1.0, -1.0});
  CHECK(std::abs(j_ce(uniform, Grade::kl0).item() - std::numbers::ln2) < 1e-9);
  CHECK(std::abs(j_ce(uniform, Grade::kl2).item() - std::numbers::ln2) < 1e-9);
  CHECK(std::abs(j_ce(uniform, Grade::kl0).item() - 0.693147) < 1e-6);

  // Near-certain correct predictions give ~0 and stay finite at extreme logits.
  const DiscOutput sure = logits({800.0, -800.0});
  CHECK(j_ce(sure, Grade::kl0).item() == doctest::Approx(0.0));
  CHECK(std::isfinite(j_ce(sure, Grade::kl2).item()));
  CHECK(j_ce(sure, Grade::kl2).item() == doctest::Approx(1600.0));

  // Mixed labels: mean of the per-row terms.
  const DiscOutput d = logits({1.0, 0.0, 0.0, 2.0});
  const double r0 = std::log1p(std::exp(-1.0));
  const double r1 = std::log1p(std::exp(-2.0));
  CHECK(j_ce(d, {Grade::kl0, Grade::kl2}).item() == doctest::Approx((r0 + r1) / 2).epsilon(1e-12));
  CHECK_THROWS_AS(j_ce(d, std::vector<Grade>{Grade::kl0}), ShapeError);
}

TEST_CASE("j_ce1 and j_ce2 use opposite labels") {
  const DiscOutput u1 = logits({0, 0, 0, 0}), u2 = logits({5, 5});
  CHECK(std::abs(j_ce1(u1, u2).item() - 2 * std::numbers::ln2) < 1e-9);
  CHECK(std::abs(j_ce2(u1, u2).item() - 2 * std::numbers::ln2) < 1e-9);

  const DiscOutput a = logits({2.0, -1.0, 0.5, 0.1}), b = logits({-0.3, 1.7});
  CHECK(j_ce1(a, b).item() == j_ce(a, Grade::kl0).item() + j_ce(b, Grade::kl2).item());
  CHECK(j_ce2(a, b).item() == j_ce(a, Grade::kl2).item() + j_ce(b, Grade::kl0).item());

  // Confident "real" predictions are cheap for ce1 and expensive for ce2.
  const DiscOutput says0 = logits({30, -30}), says2 = logits({-30, 30});
  CHECK(j_ce1(says0, says2).item() < 1e-9);
  CHECK(j_ce2(says2, says0).item() < 1e-9);
  CHECK(j_ce2(says0, says2).item() > 100);
}

TEST_CASE("j_lda hand examples") {
  const Tensor u = row({0, 2}), k = row({1, 3});
  // Population variance: both are 1, the mean gap is 1.
  CHECK(std::abs(j_lda(u, k).item() - 2.0 / (1.0 + 1e-8)) < 1e-9);
  CHECK(j_lda(row({0, 0, 0}), row({1, 1, 1})).item() == doctest::Approx(0.0));
  CHECK(j_lda(row({1, 1}), row({1, 1}), 0.0 + 1e-8).item() == 0.0);
  CHECK_THROWS_AS(j_lda(row({0, 2}), row({2, 0}), 0.0), std::domain_error);
  // Equal means with eps > 0: large but finite.
  const double big = j_lda(row({0, 2}), row({2, 0})).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(2.0 / 1e-8));
}

TEST_CASE("j_lda is shift invariant and scale invariant as eps vanishes") {
  Rng rng(11);
  std::vector<double> a(12), b(12);
  for (auto &v : a)
    v = rng.normal();
  for (auto &v : b)
    v = rng.normal() + 1.5;
  const double base = j_lda(row(a), row(b), 1e-300).item();
  for (double c : {0.5, 3.0, -2.0}) {
    std::vector<double> sa = a, sb = b;
    for (auto &v : sa)
      v = c * v + 7.0;
    for (auto &v : sb)
      v = c * v + 7.0;
    CHECK(j_lda(row(sa), row(sb), 1e-300).item() == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("j_lda averages over the batch and sums over pairs") {
  const Tensor u = Tensor::from({2, 2}, {0, 2, 0, 0});
  const Tensor k = Tensor::from({2, 2}, {1, 3, 1, 1});
  const double expect = (2.0 / (1.0 + 1e-8) + 0.0) / 2.0;
  CHECK(j_lda(u, k).item() == doctest::Approx(expect).epsilon(1e-12));
  const LatentPair p{u, k};
  CHECK(j_lda(p, p).item() == doctest::Approx(2 * expect).epsilon(1e-12));
}

TEST_CASE("j_total identity and linearity") {
  CHECK(j_total(0, 0, 0, 0, {}).j_total == 0.0);
  const LossReport r = j_total(1, 1, 1, 1, {1e-2, 1e-3});
  CHECK(std::abs(r.j_total - 2.011) < 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double mse = rng.uniform(0, 5), ce1 = rng.uniform(0, 2), ce2 = rng.uniform(0, 2);
    const double lda = rng.uniform(0, 1e4);
    const double l1 = rng.uniform(0, 1), l2 = rng.uniform(0, 1);
    const LossReport t = j_total(mse, ce1, ce2, lda, {l1, l2});
    CHECK(std::abs(t.j_total - (mse + ce1 + l1 * ce2 + l2 * lda)) <= 1e-12 * (1 + t.j_total));
    // Linear in each weight with the components fixed.
    const double at0 = j_total(mse, ce1, ce2, lda, {0, 0}).j_total;
    const double d1 = j_total(mse, ce1, ce2, lda, {1, 0}).j_total - at0;
    const double d2 = j_total(mse, ce1, ce2, lda, {0, 1}).j_total - at0;
    CHECK(t.j_total == doctest::Approx(at0 + l1 * d1 + l2 * d2).epsilon(1e-12));
  }
}

TEST_CASE("generator objective leaves out ce1") {
  const Tensor mse = Tensor::scalar(0.5), ce2 = Tensor::scalar(2.0), lda = Tensor::scalar(300.0);
  const LossWeights w{1e-2, 1e-3};
  CHECK(generator_objective(mse, ce2, lda, w).item() ==
        doctest::Approx(0.5 + 1e-2 * 2.0 + 1e-3 * 300.0).epsilon(1e-14));
}

TEST_CASE("loss weights validation") {
  const LossWeights zero{0, 0}, one{1, 1}, negative{-1e-3, 0}, nan{0, NAN};
  CHECK_NOTHROW(zero.validate());
  CHECK_NOTHROW(one.validate());
  CHECK_THROWS_AS(negative.validate(), UsageError);
  CHECK_THROWS_AS(nan.validate(), UsageError);
}

TEST_CASE("loss terms are non-negative on random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(8), b(8), l(8);
    for (std::size_t i = 0; i < 8; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      l[i] = 4 * rng.normal();
    }
    CHECK(j_mse(row(a), row(b), row(b), row(a)).item() >= 0);
    CHECK(j_lda(row(a), row(b)).item() >= 0);
    CHECK(j_ce1(logits(l), logits(a)).item() >= 0);
  }
}
