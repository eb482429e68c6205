#include <doctest.h>

#include "kecae/errors.hpp"
#include "kecae/gradcheck.hpp"
#include "kecae/ops.hpp"
#include "kecae/optim.hpp"
#include "kecae/rng.hpp"

#include <cmath>
#include <numeric>

using namespace kecae;

namespace {

Tensor randn(Shape shape, Rng &rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

double sample_std(const std::vector<double> &v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v)
    s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace

TEST_CASE("rng streams are reproducible and distinct per seed") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next();
    CHECK(va == b.next());
    CHECK(va != c.next());
  }
  Rng r(7);
  r.normal();
  const auto saved = Rng::deserialize(r.serialize());
  Rng copy = saved;
  for (int i = 0; i < 10; ++i)
    CHECK(copy.next() == r.next());
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
  }
}

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("conv2d shapes and values") {
  Rng rng(1);
  SUBCASE("stride 2 halves a 64 plane") {
    const Tensor x = randn({1, 1, 64, 64}, rng);
    const Tensor w = randn({5, 1, 3, 3}, rng);
    const Tensor y = conv2d(x, w, Tensor::zeros({5}), 2, 1);
    CHECK(y.shape() == Shape{1, 5, 32, 32});
  }
  SUBCASE("zero input and bias give zero output") {
    const Tensor y = conv2d(Tensor::zeros({1, 2, 6, 6}), randn({3, 2, 3, 3}, rng),
                            Tensor::zeros({3}), 1, 1);
    for (double v : y.values())
      CHECK(v == 0.0);
  }
  SUBCASE("ones on ones sums the window") {
    const Tensor y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0),
                            Tensor::zeros({1}), 1, 0);
    REQUIRE(y.numel() == 1);
    CHECK(y.item() == doctest::Approx(9.0).epsilon(1e-15));
  }
  SUBCASE("channel mismatch names the axes") {
    try {
      conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor{}, 1, 0);
      FAIL("expected ShapeError");
    } catch (const ShapeError &e) {
      CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
  }
}

TEST_CASE("deconv2d shapes, identity and adjointness") {
  Rng rng(2);
  CHECK(deconv2d(randn({1, 3, 32, 32}, rng), randn({3, 4, 4, 4}, rng), Tensor::zeros({4}), 2, 1)
            .shape() == Shape{1, 4, 64, 64});

  // 1×1 identity kernel copies channels through.
  Tensor w = Tensor::zeros({2, 2, 1, 1});
  w.values()[0] = 1.0; // in 0 -> out 0
  w.values()[3] = 1.0; // in 1 -> out 1
  const Tensor x = randn({2, 2, 3, 3}, rng);
  const Tensor y = deconv2d(x, w, Tensor::zeros({2}), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y[i] == x[i]);

  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    CHECK(conv_adjoint_error(2, 3, 4, 8, 4, 2, 1, 100 + trial) < 1e-9);
    CHECK(conv_adjoint_error(2, 3, 4, 7, 3, 2, 1, 200 + trial) < 1e-9);
  }
  for (const auto &r : run_adjoint_suite())
    CHECK_MESSAGE(r.error < 1e-9, r.name);
}

TEST_CASE("batchnorm2d train, constant and eval modes") {
  Rng rng(3);
  const Tensor ones = Tensor::full({3}, 1.0);
  const Tensor zeros = Tensor::zeros({3});

  SUBCASE("normalises each channel") {
    Tensor x = randn({4, 3, 5, 5}, rng);
    for (auto &v : x.values())
      v = 3.0 * v + 2.0;
    BatchNormState st(3);
    const Tensor y = batchnorm2d(x, ones, zeros, st, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i)
          s += y[(b * 3 + c) * 25 + i];
      const double m = s / 100.0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i)
          ss += (y[(b * 3 + c) * 25 + i] - m) * (y[(b * 3 + c) * 25 + i] - m);
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(ss / 100.0 - 1.0) < 1e-4);
    }
    // Running statistics moved 10% of the way toward the batch moments.
    CHECK(st.running_mean[0] != 0.0);
    CHECK(st.running_var[0] != 1.0);
  }
  SUBCASE("constant channel maps to beta") {
    const Tensor x = Tensor::full({2, 3, 2, 2}, 0.7);
    const Tensor beta = Tensor::from({3}, {0.1, -0.2, 0.3});
    BatchNormState st(3);
    const Tensor y = batchnorm2d(x, ones, beta, st, Mode::train, 1e-5);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i)
          CHECK(y[(b * 3 + c) * 4 + i] == doctest::Approx(beta[c]).epsilon(1e-12));
  }
  SUBCASE("eval mode uses running statistics") {
    BatchNormState st(3);
    st.running_mean.values()[0] = 0.5;
    st.running_mean.values()[1] = -1.0;
    st.running_mean.values()[2] = 2.0;
    st.running_var.values()[0] = 4.0;
    st.running_var.values()[1] = 0.25;
    st.running_var.values()[2] = 1.5;
    const Tensor gamma = Tensor::from({3}, {2.0, 0.5, -1.0});
    const Tensor beta = Tensor::from({3}, {0.0, 1.0, 0.25});
    const Tensor x = randn({2, 3, 2, 2}, rng);
    const Tensor y = batchnorm2d(x, gamma, beta, st, Mode::eval, 1e-5);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i) {
          const std::size_t idx = (b * 3 + c) * 4 + i;
          const double expect = (x[idx] - st.running_mean[c]) /
                                    std::sqrt(st.running_var[c] + 1e-5) * gamma[c] +
                                beta[c];
          CHECK(y[idx] == doctest::Approx(expect).epsilon(1e-14));
        }
  }
  SUBCASE("single element per channel is degenerate in train mode") {
    BatchNormState st(3);
    CHECK_THROWS_AS(batchnorm2d(randn({1, 3, 1, 1}, rng), ones, zeros, st, Mode::train),
                    ShapeError);
    CHECK_NOTHROW(batchnorm2d(randn({1, 3, 1, 1}, rng), ones, zeros, st, Mode::eval));
  }
}

TEST_CASE("leaky_relu branches and subgradient") {
  const Tensor x = Tensor::from({3}, {2.0, -1.0, 0.0}, true);
  const Tensor y = leaky_relu(x, 0.2);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(y[2] == 0.0);
  backward(sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == doctest::Approx(0.2));
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("global_avg_pool") {
  CHECK(global_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
  const Tensor c = global_avg_pool(Tensor::full({2, 3, 4, 5}, -1.25));
  CHECK(c.shape() == Shape{2, 3});
  for (double v : c.values())
    CHECK(v == -1.25);
  const Tensor x = Tensor::from({1, 3, 1, 1}, {0.1, 0.2, 0.3});
  const Tensor p = global_avg_pool(x);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(p[i] == x[i]);
}

TEST_CASE("backward engine") {
  Rng rng(5);
  SUBCASE("sum gives ones") {
    const Tensor x = randn({2, 3, 4}, rng, true);
    backward(sum(x));
    for (double g : x.grad())
      CHECK(g == 1.0);
  }
  SUBCASE("mean squared error closed form") {
    const Tensor x = randn({7}, rng, true);
    const Tensor t = randn({7}, rng);
    backward(mean(square(sub(x, t))));
    for (std::size_t i = 0; i < 7; ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 * (x[i] - t[i]) / 7.0).epsilon(1e-14));
  }
  SUBCASE("two uses add their path gradients") {
    const Tensor x = randn({4}, rng, true);
    backward(sum(add(scale(x, 3.0), mul(x, x))));
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(x.grad()[i] == doctest::Approx(3.0 + 2.0 * x[i]).epsilon(1e-14));
  }
  SUBCASE("non-scalar loss is a rank error") {
    const Tensor x = randn({3}, rng, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), RankError);
  }
  SUBCASE("every requires-grad ancestor gets a grad") {
    const Tensor a = randn({2, 2}, rng, true);
    const Tensor b = randn({2, 2}, rng, true);
    const Tensor unused_path = mul(a, Tensor::zeros({2, 2}));
    backward(sum(add(unused_path, b)));
    CHECK(a.has_grad());
    CHECK(b.has_grad());
  }
}

TEST_CASE("adam_step") {
  ParamGroup g("g");
  g.add_param("p", Tensor::from({1}, {0.5}));
  Tensor p = g.params().at("p");

  SUBCASE("zero gradient leaves values") {
    backward(scale(sum(p), 0.0));
    adam_step(g, AdamOptions{0.1});
    CHECK(p[0] == 0.5);
  }
  SUBCASE("first step of unit gradient moves by lr") {
    backward(sum(p));
    adam_step(g, AdamOptions{0.1});
    // mhat = 1, vhat = 1 after bias correction.
    CHECK(p[0] == doctest::Approx(0.5 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    g.zero_grad();
    backward(sum(p));
    adam_step(g, AdamOptions{0.1});
    CHECK(p[0] == doctest::Approx(0.5 - 0.2 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(g.step() == 2);
  }
  SUBCASE("frozen group is bit-identical") {
    backward(sum(p));
    g.freeze();
    const double before = p[0];
    for (int i = 0; i < 5; ++i)
      adam_step(g, AdamOptions{0.1});
    CHECK(p[0] == before);
    CHECK(g.step() == 0);
  }
}

TEST_CASE("freeze soundness: frozen weights still pass gradients upstream") {
  Rng rng(6);
  ParamGroup frozen("frozen");
  frozen.add_param("w", randn({2, 3}, rng));
  frozen.add_param("b", randn({2}, rng));
  frozen.freeze();
  const std::vector<double> snapshot(frozen.params().at("w").values().begin(),
                                     frozen.params().at("w").values().end());
  const Tensor upstream = randn({4, 3}, rng, true);
  for (int step = 0; step < 3; ++step) {
    backward(sum(linear(upstream, frozen.params().at("w"), frozen.params().at("b"))));
    adam_step(frozen, AdamOptions{0.5});
  }
  CHECK(upstream.has_grad());
  CHECK(std::abs(upstream.grad()[0]) > 0.0);
  CHECK_FALSE(frozen.params().at("w").has_grad());
  const auto after = frozen.params().at("w").values();
  for (std::size_t i = 0; i < snapshot.size(); ++i)
    CHECK(after[i] == snapshot[i]);
}

TEST_CASE("kaiming_init") {
  Rng r1(11), r2(11);
  const Tensor a = kaiming_init({100000}, 2, r1);
  const Tensor b = kaiming_init({100000}, 2, r2);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  const std::vector<double> av(a.values().begin(), a.values().end());
  CHECK(std::abs(sample_std(av) - 1.0) < 0.02);
  Rng r3(12);
  const Tensor c = kaiming_init({100000}, 8, r3);
  const std::vector<double> cv(c.values().begin(), c.values().end());
  CHECK(std::abs(sample_std(cv) - 0.5) < 0.01);
  CHECK_THROWS(kaiming_init({3}, 0, r3));
}

TEST_CASE("finite difference gradcheck") {
  Rng rng(9);
  SUBCASE("sum of squares") {
    const Tensor x = randn({3, 4}, rng);
    CHECK(finite_diff_gradcheck([](const Tensor &t) { return sum(square(t)); }, x, 1e-5) < 1e-7);
  }
  SUBCASE("conv2d then leaky_relu then mean on 1x1x5x5") {
    const Tensor w = randn({1, 1, 3, 3}, rng);
    const Tensor b = randn({1}, rng);
    const Tensor x = randn({1, 1, 5, 5}, rng);
    CHECK(finite_diff_gradcheck(
              [&](const Tensor &t) { return mean(leaky_relu(conv2d(t, w, b, 1, 0), 0.2)); }, x,
              1e-6) < 1e-5);
  }
  SUBCASE("batchnorm train then mean on 2x2x3x3") {
    const Tensor x = randn({2, 2, 3, 3}, rng);
    const Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
    const double err = finite_diff_gradcheck(
        [&](const Tensor &t) {
          BatchNormState st(2);
          return mean(batchnorm2d(t, g, b, st, Mode::train));
        },
        x, 1e-3);
    CHECK(err < 1e-4);
  }
  SUBCASE("non-scalar function is a rank error") {
    CHECK_THROWS_AS(finite_diff_gradcheck([](const Tensor &t) { return scale(t, 2.0); },
                                          randn({2}, rng)),
                    RankError);
  }
  SUBCASE("full primitive suite") {
    for (const auto &r : run_gradcheck_suite())
      CHECK_MESSAGE(r.max_rel_error < 1e-4, r.name << " " << r.max_rel_error);
  }
}

TEST_CASE("losses on hand examples") {
  CHECK(mse(Tensor::from({2}, {2, 4}), Tensor::from({2}, {1, 2})).item() == 2.5);
  CHECK(softmax_cross_entropy(Tensor::from({1, 2}, {0.3, 0.3}), {1}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double r = fisher_ratio(Tensor::from({1, 2}, {0, 2}), Tensor::from({1, 2}, {1, 3}), 1e-8)
                       .item();
  CHECK(std::abs(r - 2.0 / (1.0 + 1e-8)) < 1e-12);
  CHECK_THROWS_AS(fisher_ratio(Tensor::from({1, 2}, {1, 1}), Tensor::from({1, 2}, {1, 1}), 0.0),
                  std::domain_error);
  const double big =
      fisher_ratio(Tensor::from({1, 2}, {0, 2}), Tensor::from({1, 2}, {2, 0}), 1e-8).item();
  CHECK(std::isfinite(big));
  CHECK(big > 1e7);
}
