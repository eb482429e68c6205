#include <doctest.h>

#include "kecae/errors.hpp"
#include "kecae/eval.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace kecae;
namespace fs = std::filesystem;

namespace {

struct Blobs {
  FeatureRows x;
  std::vector<int> y;
};

Blobs blobs(std::size_t n, double sep, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double cx = label ? sep : -sep;
    b.x.push_back({cx + rng.normal(), rng.normal()});
    b.y.push_back(label);
  }
  return b;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.input_side = 32;
  a.block_channels = {4, 8};
  a.latent_depth = 4;
  a.disc_channels = {4, 4};
  return a;
}

std::size_t lines(const fs::path &p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);)
    ++n;
  return n;
}

} // namespace

TEST_CASE("probe separates two Gaussian blobs") {
  const Blobs train = blobs(100, 4.0, 1), test = blobs(400, 4.0, 2);
  const ProbeModel m = probe_train(train.x, train.y);
  CHECK(probe_accuracy(m, train.x, train.y) >= 0.98);
  CHECK(probe_accuracy(m, test.x, test.y) >= 0.98);
  CHECK(m.gamma == doctest::Approx(1.0 / (2.0 * [&] {
                                     double s = 0, s2 = 0;
                                     for (const auto &r : train.x)
                                       for (double v : r) {
                                         s += v;
                                         s2 += v * v;
                                       }
                                     const double mu = s / 200;
                                     return s2 / 200 - mu * mu;
                                   }())));
  CHECK_FALSE(m.support.empty());
  CHECK(m.support.size() < train.x.size());
}

TEST_CASE("probe dual solution satisfies the box and equality constraints") {
  const Blobs b = blobs(80, 1.0, 3);
  const ProbeModel m = probe_train(b.x, b.y, {.C = 0.7});
  double sum = 0.0;
  for (double c : m.coef) {
    CHECK(std::abs(c) <= 0.7 + 1e-12);
    CHECK(c != 0.0);
    sum += c;
  }
  CHECK(std::abs(sum) < 1e-9);
}

TEST_CASE("probe on shuffled labels is near chance") {
  // Labels shuffled independently of the features, in training and test data.
  Blobs train = blobs(200, 0.0, 4), test = blobs(1000, 0.0, 5);
  Rng rng(6);
  for (auto *y : {&train.y, &test.y})
    for (std::size_t i = y->size(); i > 1; --i)
      std::swap((*y)[i - 1], (*y)[rng.below(i)]);
  const double acc = probe_accuracy(probe_train(train.x, train.y), test.x, test.y);
  CHECK(std::abs(acc - 0.5) <= 0.1);
}

TEST_CASE("probe training is deterministic") {
  const Blobs b = blobs(60, 1.5, 7);
  const ProbeModel m1 = probe_train(b.x, b.y), m2 = probe_train(b.x, b.y);
  CHECK(m1.support == m2.support);
  CHECK(m1.coef == m2.coef);
  CHECK(m1.bias == m2.bias);
  CHECK(m1.iterations == m2.iterations);
}

TEST_CASE("probe preconditions") {
  const Blobs b = blobs(10, 2.0, 8);
  CHECK_THROWS_AS(probe_train(b.x, std::vector<int>(10, 1)), DataError);
  CHECK_THROWS_AS(probe_train(b.x, std::vector<int>(9, 1)), DataError);
  std::vector<int> bad = b.y;
  bad[0] = 2;
  CHECK_THROWS_AS(probe_train(b.x, bad), DataError);
  CHECK_THROWS_AS(probe_train(b.x, b.y, {.C = 0}), UsageError);
}

TEST_CASE("gap oracle recovers the rendered width") {
  SynthOptions noiseless;
  noiseless.noise = false;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed)
    for (Grade g : {Grade::kl0, Grade::kl2})
      for (std::size_t side : {64, 96}) {
        const SynthImage s = synth_generate(g, seed, side, noiseless);
        const auto est = gap_width_estimate(s.image);
        REQUIRE(est.has_value());
        CHECK(std::abs(*est - s.gap_width) <= 1.0);
        ++checked;
      }
  CHECK(checked == 160);

  // Noisy renders at the generator's default noise stay close too.
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    const SynthImage s = synth_generate(Grade::kl0, seed, 64);
    const auto est = gap_width_estimate(s.image);
    REQUIRE(est.has_value());
    CHECK(std::abs(*est - s.gap_width) <= 1.0);
  }
}

TEST_CASE("gap oracle on a KL-0 render of width 14 px") {
  SynthOptions noiseless;
  noiseless.noise = false;
  for (std::uint64_t seed = 1; seed < 5000; ++seed) {
    const SynthImage s = synth_generate(Grade::kl0, seed, 64, noiseless);
    if (std::abs(s.gap_width - 14.0) < 0.05) {
      const auto est = gap_width_estimate(s.image);
      REQUIRE(est.has_value());
      CHECK(*est == doctest::Approx(14.0).epsilon(1.0 / 14.0));
      return;
    }
  }
  FAIL("no render with a 14 px gap");
}

TEST_CASE("gap oracle edge cases") {
  Image white(64);
  std::fill(white.pixels.begin(), white.pixels.end(), 1.0);
  CHECK_FALSE(gap_width_estimate(white).has_value());
  Image flat(64);
  std::fill(flat.pixels.begin(), flat.pixels.end(), 0.3);
  CHECK_FALSE(gap_width_estimate(flat).has_value());
  // A dark band touching the border is not a joint gap.
  Image edge(64);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c)
      edge.at(r, c) = r < 10 ? 0.1 : 0.8;
  CHECK_FALSE(gap_width_estimate(edge).has_value());

  for (std::uint64_t seed = 1; seed < 20; ++seed) {
    const SynthImage s = synth_generate(Grade::kl2, seed, 64);
    CHECK(gap_width_estimate(flip_horizontal(s.image)) == gap_width_estimate(s.image));
  }
}

TEST_CASE("range distance") {
  CHECK(range_distance(3, {4, 8}) == 1);
  CHECK(range_distance(5, {4, 8}) == 0);
  CHECK(range_distance(8, {4, 8}) == 0);
  CHECK(range_distance(10.5, {4, 8}) == 2.5);
}

TEST_CASE("run_jobs visits every index once and propagates failures") {
  for (std::size_t workers : {1, 3}) {
    std::vector<std::atomic<int>> hits(50);
    run_jobs(hits.size(), [&](std::size_t i) { ++hits[i]; }, workers);
    for (auto &h : hits)
      CHECK(h == 1);
    CHECK_THROWS_AS(run_jobs(
                        10,
                        [](std::size_t i) {
                          if (i == 4)
                            throw DataError("job 4");
                        },
                        workers),
                    DataError);
  }
  run_jobs(0, [](std::size_t) { FAIL("no jobs expected"); }, 2);
}

TEST_CASE("latent probe and exchange oracle on an untrained model") {
  KeCaeModel m(tiny_arch(), 1);
  const SplitSet fit = generate_items(12, 32, 5), eval = generate_items(8, 32, 6);
  const auto r = latent_probe(m, fit, eval, 10, {}, 1);
  CHECK(r.acc_hK >= 0.0);
  CHECK(r.acc_hK <= 1.0);
  CHECK(r.acc_hU >= 0.0);
  const ExchangeResult ex = exchange_semantics(m, eval, 20, 2);
  CHECK(ex.pairs == 20);
  CHECK(ex.closer + ex.undetected <= 20);
  CHECK_THROWS_AS(exchange_semantics(m, eval, 65, 2), std::out_of_range);
}

TEST_CASE("classifiers train and report test accuracy") {
  const SplitSet train = generate_items(16, 32, 10), val = generate_items(6, 32, 11),
                 test = generate_items(6, 32, 12);
  auto to_labelled = [](const SplitSet &s) {
    std::vector<LabelledImage> out;
    for (const auto &it : s.kl0)
      out.push_back({it.image, it.grade});
    for (const auto &it : s.kl2)
      out.push_back({it.image, it.grade});
    return out;
  };
  for (const char *kind : {"siamese_gap", "small_cnn"}) {
    auto c1 = make_classifier(kind, tiny_arch(), 3);
    auto c2 = make_classifier(kind, tiny_arch(), 3);
    CHECK(c1->name() == kind);
    const ClassifierOptions opts{3, 8, 1e-3};
    const double a1 = train_and_test_classifier(*c1, to_labelled(train), to_labelled(val),
                                                to_labelled(test), opts, 4, 32);
    const double a2 = train_and_test_classifier(*c2, to_labelled(train), to_labelled(val),
                                                to_labelled(test), opts, 4, 32);
    CHECK(a1 == a2);
    CHECK(a1 >= 0.0);
    CHECK(a1 <= 1.0);
  }
  CHECK_THROWS_AS(make_classifier("vgg", tiny_arch(), 1), UsageError);
}

TEST_CASE("experiment drivers produce one row per cell") {
  RunConfig cfg;
  cfg.train.arch = tiny_arch();
  cfg.train.batch_size = 4;
  cfg.grid_values = {1e-3, 1.0};
  cfg.grid_epochs = 1;
  cfg.grid_pairs = 8;
  cfg.probe_per_class = 10;
  cfg.sizes = {8, 12};
  cfg.size_seeds = 2;
  cfg.size_epochs = 1;
  Splits splits;
  splits.train = generate_items(12, 32, 20);
  splits.val = generate_items(5, 32, 21);
  splits.test = generate_items(5, 32, 22);

  const auto grid = grid_search(cfg, splits);
  CHECK(grid.size() == 4);
  CHECK(std::count_if(grid.begin(), grid.end(), [](const GridCell &c) { return c.best; }) == 1);
  for (const auto &c : grid) {
    CHECK((c.lambda1 == 1e-3 || c.lambda1 == 1.0));
    if (!std::isnan(c.acc_hK))
      CHECK(c.acc_hK <= std::max_element(grid.begin(), grid.end(), [](auto &a, auto &b) {
                         return a.acc_hK < b.acc_hK;
                       })->acc_hK);
  }

  const auto sizes = sample_size_study(cfg, splits);
  REQUIRE(sizes.size() == 2);
  CHECK(sizes[0].n == 8);
  CHECK(std::isfinite(sizes[1].final_loss));
  cfg.sizes = {145};
  CHECK_THROWS_AS(sample_size_study(cfg, splits), DataError);

  const fs::path dir = fs::temp_directory_path() / "kecae_eval_csv";
  fs::remove_all(dir);
  write_grid_csv(dir / "grid.csv", grid);
  write_sizes_csv(dir / "sizes.csv", sizes);
  CHECK(lines(dir / "grid.csv") == 5);
  CHECK(lines(dir / "sizes.csv") == 3);
  std::ifstream in(dir / "grid.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "lambda1,lambda2,acc_hK,acc_hU");
  fs::remove_all(dir);
}

TEST_CASE("augmentation eval covers every input set") {
  RunConfig cfg;
  cfg.train.arch = tiny_arch();
  cfg.aug_seeds = 2;
  cfg.aug_pairs = 6;
  cfg.clf_epochs = 1;
  cfg.clf_batch = 8;
  Splits splits;
  splits.train = generate_items(8, 32, 30);
  splits.val = generate_items(4, 32, 31);
  splits.test = generate_items(4, 32, 32);
  KeCaeModel gen(tiny_arch(), 1);
  const auto rows = augmentation_eval(gen, splits, cfg, {"siamese_gap"});
  CHECK(rows.size() == 4 * 2);
  const auto summary = summarize_augmentation(rows);
  REQUIRE(summary.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(summary[i].input_set == augment_input_sets()[i]);
  CHECK(summary[0].diff_vs_x == 0.0);
  CHECK(summary[3].diff_vs_x == doctest::Approx(summary[3].mean_acc - summary[0].mean_acc));
  CHECK_THROWS_AS(augmentation_eval(gen, splits, cfg, {"nope"}), UsageError);

  const fs::path p = fs::temp_directory_path() / "kecae_aug.csv";
  write_augment_csv(p, rows);
  CHECK(lines(p) == 9);
  fs::remove(p);
}

TEST_CASE("worker count reads the environment") {
  ::setenv("KECAE_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("KECAE_THREADS", "zero", 1);
  CHECK_THROWS_AS(worker_count(), UsageError);
  ::unsetenv("KECAE_THREADS");
  CHECK(worker_count() == 1);
}
