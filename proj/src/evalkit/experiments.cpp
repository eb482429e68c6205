#include "kecae/eval.hpp"

#include "kecae/errors.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace kecae {

namespace fs = std::filesystem;

namespace {

std::vector<int> class_labels(const std::vector<const Item *> &items) {
  std::vector<int> y;
  y.reserve(items.size());
  for (const Item *it : items)
    y.push_back(class_index(it->grade));
  return y;
}

// Up to `per_class` items per class with distinct sources, in seeded order.
std::vector<const Item *> pick_distinct(const SplitSet &set, std::size_t per_class,
                                        std::uint64_t seed) {
  std::vector<const Item *> out;
  for (Grade g : {Grade::kl0, Grade::kl2}) {
    const auto &items = set.of(g);
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    Rng rng(derive_seed(seed, 0x9b0e, static_cast<std::uint64_t>(g)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    std::set<std::string> seen;
    std::size_t taken = 0;
    for (std::size_t k : order) {
      if (taken == per_class)
        break;
      if (!seen.insert(items[k].source).second)
        continue;
      out.push_back(&items[k]);
      ++taken;
    }
  }
  return out;
}

std::vector<const Item *> all_items(const SplitSet &set) {
  std::vector<const Item *> out;
  for (const auto &it : set.kl0)
    out.push_back(&it);
  for (const auto &it : set.kl2)
    out.push_back(&it);
  return out;
}

std::ofstream open_csv(const fs::path &path) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  return out;
}

FitOptions quiet_fit() {
  FitOptions o;
  o.write_files = false;
  return o;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

LatentProbeResult latent_probe(KeCaeModel &model, const SplitSet &fit, const SplitSet &eval,
                               std::size_t per_class, const ProbeOptions &opts,
                               std::uint64_t seed) {
  const auto fit_items = pick_distinct(fit, per_class, seed);
  const auto eval_items = all_items(eval);
  const Latents lf = encode_items(model, fit_items);
  const Latents le = encode_items(model, eval_items);
  const auto yf = class_labels(fit_items), ye = class_labels(eval_items);
  LatentProbeResult r;
  r.acc_hK = probe_accuracy(probe_train(lf.hK, yf, opts), le.hK, ye);
  r.acc_hU = probe_accuracy(probe_train(lf.hU, yf, opts), le.hU, ye);
  return r;
}

ExchangeResult exchange_semantics(KeCaeModel &model, const SplitSet &held_out,
                                  std::size_t n_pairs, std::uint64_t seed) {
  const auto pairs =
      sample_pairs(make_pairs(held_out.kl0.size(), held_out.kl2.size()), n_pairs, seed);
  const auto outputs = generate(model, held_out, pairs);
  const auto target = gap_range(Grade::kl2, model.arch.input_side);
  ExchangeResult r;
  r.pairs = pairs.size();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto recon = gap_width_estimate(outputs[4 * k].image);
    const auto swapped = gap_width_estimate(outputs[4 * k + 2].image);
    if (!recon || !swapped) {
      ++r.undetected;
      continue;
    }
    if (range_distance(*swapped, target) < range_distance(*recon, target))
      ++r.closer;
  }
  return r;
}

// ---------------------------------------------------------------------------

std::size_t worker_count() {
  const char *env = std::getenv("KECAE_THREADS");
  if (!env || !*env)
    return 1;
  char *end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (*end != '\0' || v == 0)
    throw UsageError(std::string("KECAE_THREADS must be a positive integer, got '") + env + "'");
  return v;
}

void run_jobs(std::size_t count, const std::function<void(std::size_t)> &job,
              std::size_t workers) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i)
      job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= count)
        return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first)
          first = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back(worker);
  for (auto &t : threads)
    t.join();
  if (first)
    std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------

std::vector<GridCell> grid_search(const RunConfig &cfg, const Splits &splits) {
  const auto &vals = cfg.grid_values;
  std::vector<GridCell> cells;
  for (double l1 : vals)
    for (double l2 : vals)
      cells.push_back({l1, l2, 0.0, 0.0, false});

  const auto pairs = sample_pairs(make_pairs(splits.train.kl0.size(), splits.train.kl2.size()),
                                  cfg.grid_pairs, derive_seed(cfg.train.seed, 0x9a12));
  run_jobs(
      cells.size(),
      [&](std::size_t c) {
        GridCell &cell = cells[c];
        TrainConfig tc = cfg.train;
        tc.epochs = cfg.grid_epochs;
        tc.weights = {cell.lambda1, cell.lambda2};
        tc.seed = derive_seed(cfg.train.seed, 0x6e1d, c);
        try {
          Trainer t(tc);
          t.fit(splits.train, pairs, {}, quiet_fit());
          const auto r = latent_probe(t.model(), splits.train, splits.val, cfg.probe_per_class,
                                      {.C = cfg.probe_c}, tc.seed);
          cell.acc_hK = r.acc_hK;
          cell.acc_hU = r.acc_hU;
        } catch (const DivergenceError &e) {
          spdlog::warn("grid cell ({}, {}) diverged: {}", cell.lambda1, cell.lambda2, e.what());
          cell.acc_hK = cell.acc_hU = std::numeric_limits<double>::quiet_NaN();
        }
        spdlog::info("grid cell lambda1={} lambda2={} acc_hK={:.4f} acc_hU={:.4f}", cell.lambda1,
                     cell.lambda2, cell.acc_hK, cell.acc_hU);
      },
      worker_count());

  GridCell *best = nullptr;
  for (auto &c : cells)
    if (!std::isnan(c.acc_hK) && (!best || c.acc_hK > best->acc_hK))
      best = &c;
  if (best)
    best->best = true;
  return cells;
}

void write_grid_csv(const fs::path &path, const std::vector<GridCell> &cells) {
  auto out = open_csv(path);
  out << "lambda1,lambda2,acc_hK,acc_hU\n";
  for (const auto &c : cells)
    out << fmt(c.lambda1) << ',' << fmt(c.lambda2) << ',' << fmt(c.acc_hK) << ','
        << fmt(c.acc_hU) << '\n';
}

std::vector<SizeRow> sample_size_study(const RunConfig &cfg, const Splits &splits) {
  const PairIndex index = make_pairs(splits.train.kl0.size(), splits.train.kl2.size());
  for (std::size_t n : cfg.sizes)
    if (n > index.size())
      throw DataError("sample_size_study: N=" + std::to_string(n) + " exceeds the " +
                      std::to_string(index.size()) + " available pairs");
  const std::size_t seeds = std::max<std::size_t>(1, cfg.size_seeds);
  const std::size_t jobs = cfg.sizes.size() * seeds;
  std::vector<double> loss(jobs), acc(jobs);
  run_jobs(
      jobs,
      [&](std::size_t j) {
        const std::size_t n = cfg.sizes[j / seeds], s = j % seeds;
        TrainConfig tc = cfg.train;
        tc.epochs = cfg.size_epochs;
        tc.pairs = n;
        tc.seed = derive_seed(cfg.train.seed, 0x512e, s);
        const auto pairs = sample_pairs(index, n, derive_seed(tc.seed, 0x9a1e));
        Trainer t(tc);
        t.fit(splits.train, pairs, {}, quiet_fit());
        loss[j] = t.history().back().mean.j_total;
        acc[j] = latent_probe(t.model(), splits.train, splits.val, cfg.probe_per_class,
                              {.C = cfg.probe_c}, tc.seed)
                     .acc_hK;
        spdlog::info("sizes N={} seed={} final_loss={:.6f} acc={:.4f}", n, s, loss[j], acc[j]);
      },
      worker_count());

  std::vector<SizeRow> rows;
  for (std::size_t i = 0; i < cfg.sizes.size(); ++i) {
    SizeRow r{cfg.sizes[i], 0.0, 0.0};
    for (std::size_t s = 0; s < seeds; ++s) {
      r.final_loss += loss[i * seeds + s] / static_cast<double>(seeds);
      r.acc += acc[i * seeds + s] / static_cast<double>(seeds);
    }
    rows.push_back(r);
  }
  return rows;
}

void write_sizes_csv(const fs::path &path, const std::vector<SizeRow> &rows) {
  auto out = open_csv(path);
  out << "N,final_loss,acc\n";
  for (const auto &r : rows)
    out << r.n << ',' << fmt(r.final_loss) << ',' << fmt(r.acc) << '\n';
}

// ---------------------------------------------------------------------------
// Classifiers

namespace {

class SiameseGap final : public Classifier {
public:
  SiameseGap(const ArchConfig &arch, std::uint64_t seed) {
    Rng rng(seed);
    net_ = Discriminator(arch.disc_channels, arch.leaky_slope, rng);
    net_.register_into(params_, "siamese");
  }
  Tensor logits(const Tensor &images, Mode mode) override {
    return net_.discriminate(patch_pairs(images), mode).logits;
  }
  ParamGroup &params() override { return params_; }
  std::string name() const override { return "siamese_gap"; }

private:
  Discriminator net_;
  ParamGroup params_{"classifier"};
};

class SmallCnn final : public Classifier {
public:
  SmallCnn(const ArchConfig &arch, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t c : {16, 32, 64, 64}) {
      blocks_.emplace_back(in, c, 3, 2, 1, false, arch.leaky_slope, rng);
      in = c;
    }
    head_w_ = kaiming_init({2, in}, in, rng);
    head_b_ = Tensor::zeros({2}, true);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].register_into(params_, "cnn.block" + std::to_string(i));
    params_.add_param("cnn.head.weight", head_w_);
    params_.add_param("cnn.head.bias", head_b_);
  }
  Tensor logits(const Tensor &images, Mode mode) override {
    Tensor z = images;
    for (auto &b : blocks_)
      z = b.forward(z, mode);
    return linear(global_avg_pool(z), head_w_, head_b_);
  }
  ParamGroup &params() override { return params_; }
  std::string name() const override { return "small_cnn"; }

private:
  std::vector<ConvBlock> blocks_;
  Tensor head_w_, head_b_;
  ParamGroup params_{"classifier"};
};

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(ParamGroup &g) {
  Snapshot s;
  for (const auto &[_, t] : g.params())
    s.emplace_back(t.values().begin(), t.values().end());
  for (const auto &[_, t] : g.buffers())
    s.emplace_back(t.values().begin(), t.values().end());
  return s;
}

void restore(ParamGroup &g, const Snapshot &s) {
  std::size_t k = 0;
  auto put = [&](Tensor t) {
    auto v = t.values();
    std::copy(s[k].begin(), s[k].end(), v.begin());
    ++k;
  };
  for (const auto &[_, t] : g.params())
    put(t);
  for (const auto &[_, t] : g.buffers())
    put(t);
}

double accuracy(Classifier &clf, const std::vector<LabelledImage> &set, std::size_t side) {
  if (set.empty())
    return 0.0;
  NoGradGuard no_grad;
  std::size_t hit = 0;
  constexpr std::size_t kBatch = 64;
  for (std::size_t begin = 0; begin < set.size(); begin += kBatch) {
    const std::size_t end = std::min(set.size(), begin + kBatch);
    std::vector<Image> imgs;
    for (std::size_t i = begin; i < end; ++i)
      imgs.push_back(set[i].image);
    const Tensor lg = clf.logits(images_to_tensor(imgs, side), Mode::eval);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t r = i - begin;
      const int pred = lg[2 * r + 1] > lg[2 * r] ? 1 : 0;
      hit += pred == class_index(set[i].label);
    }
  }
  return static_cast<double>(hit) / static_cast<double>(set.size());
}

std::vector<LabelledImage> labelled(const SplitSet &set) {
  std::vector<LabelledImage> out;
  for (const Item *it : all_items(set))
    out.push_back({it->image, it->grade});
  return out;
}

} // namespace

std::unique_ptr<Classifier> make_classifier(const std::string &kind, const ArchConfig &arch,
                                            std::uint64_t seed) {
  if (kind == "siamese_gap")
    return std::make_unique<SiameseGap>(arch, seed);
  if (kind == "small_cnn")
    return std::make_unique<SmallCnn>(arch, seed);
  throw UsageError("unknown classifier '" + kind + "' (expected siamese_gap or small_cnn)");
}

double train_and_test_classifier(Classifier &clf, const std::vector<LabelledImage> &train,
                                 const std::vector<LabelledImage> &val,
                                 const std::vector<LabelledImage> &test,
                                 const ClassifierOptions &opts, std::uint64_t seed,
                                 std::size_t input_side) {
  if (train.size() < 2)
    throw DataError("train_and_test_classifier: need at least 2 training images");
  const std::size_t bs = std::max<std::size_t>(2, std::min(opts.batch_size, train.size()));
  const std::size_t nb = train.size() / bs;
  ParamGroup &g = clf.params();
  std::vector<std::size_t> order(train.size());
  Snapshot best = snapshot(g);
  double best_val = -1.0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    Rng shuffle(derive_seed(seed, 0xc1f0, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t begin = b * bs, end = b + 1 == nb ? train.size() : begin + bs;
      std::vector<Image> imgs;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        imgs.push_back(train[order[k]].image);
        labels.push_back(class_index(train[order[k]].label));
      }
      g.zero_grad();
      const Tensor loss =
          softmax_cross_entropy(clf.logits(images_to_tensor(imgs, input_side), Mode::train), labels);
      if (!std::isfinite(loss.item()))
        throw DivergenceError(clf.name() + ": non-finite classifier loss in epoch " +
                              std::to_string(epoch));
      backward(loss);
      adam_step(g, {opts.lr});
    }
    g.zero_grad();
    const double v = accuracy(clf, val, input_side);
    if (v > best_val) {
      best_val = v;
      best = snapshot(g);
    }
  }
  restore(g, best);
  return accuracy(clf, test, input_side);
}

std::vector<AugRow> augmentation_eval(KeCaeModel &generator, const Splits &splits,
                                      const RunConfig &cfg,
                                      const std::vector<std::string> &classifiers) {
  const std::size_t side = generator.arch.input_side;
  const auto pairs =
      sample_pairs(make_pairs(splits.train.kl0.size(), splits.train.kl2.size()), cfg.aug_pairs,
                   derive_seed(cfg.train.seed, 0xa06e));
  const auto outputs = generate(generator, splits.train, pairs);

  const std::vector<LabelledImage> x = labelled(splits.train);
  std::vector<LabelledImage> xhat, xprime;
  for (const auto &o : outputs) {
    const bool recon = o.kind == OutputKind::recon1 || o.kind == OutputKind::recon2;
    (recon ? xhat : xprime).push_back({o.image, o.label});
  }
  std::map<std::string, std::vector<LabelledImage>> inputs;
  inputs["X"] = x;
  inputs["X+Xhat"] = x;
  inputs["X+Xhat"].insert(inputs["X+Xhat"].end(), xhat.begin(), xhat.end());
  inputs["X+Xprime"] = x;
  inputs["X+Xprime"].insert(inputs["X+Xprime"].end(), xprime.begin(), xprime.end());
  inputs["X+Xhat+Xprime"] = inputs["X+Xhat"];
  inputs["X+Xhat+Xprime"].insert(inputs["X+Xhat+Xprime"].end(), xprime.begin(), xprime.end());

  const auto val = labelled(splits.val), test = labelled(splits.test);
  const auto &sets = augment_input_sets();
  const std::size_t seeds = std::max<std::size_t>(1, cfg.aug_seeds);
  std::vector<AugRow> rows;
  for (const auto &c : classifiers)
    for (const auto &s : sets)
      for (std::size_t k = 0; k < seeds; ++k)
        rows.push_back({c, s, k, 0.0});
  for (const auto &c : classifiers)
    make_classifier(c, generator.arch, 0); // reject unknown names before any work

  const ClassifierOptions opts{cfg.clf_epochs, cfg.clf_batch, cfg.clf_lr};
  run_jobs(
      rows.size(),
      [&](std::size_t i) {
        AugRow &r = rows[i];
        // The classifier's init and shuffle depend on the seed only, so each
        // input set starts from the same weights.
        const std::uint64_t s = derive_seed(cfg.train.seed, 0xc1a5, r.seed);
        auto clf = make_classifier(r.classifier, generator.arch, s);
        r.acc = train_and_test_classifier(*clf, inputs.at(r.input_set), val, test, opts, s, side);
        spdlog::info("augeval {} {} seed={} acc={:.4f}", r.classifier, r.input_set, r.seed, r.acc);
      },
      worker_count());
  return rows;
}

void write_augment_csv(const fs::path &path, const std::vector<AugRow> &rows) {
  auto out = open_csv(path);
  out << "classifier,input_set,seed,acc\n";
  for (const auto &r : rows)
    out << r.classifier << ',' << r.input_set << ',' << r.seed << ',' << fmt(r.acc) << '\n';
}

std::vector<AugSummary> summarize_augmentation(const std::vector<AugRow> &rows) {
  std::vector<AugSummary> out;
  std::vector<std::size_t> counts;
  for (const auto &r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AugSummary &s) {
      return s.classifier == r.classifier && s.input_set == r.input_set;
    });
    if (it == out.end()) {
      out.push_back({r.classifier, r.input_set, 0.0, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    it->mean_acc += r.acc;
    ++counts[static_cast<std::size_t>(it - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].mean_acc /= static_cast<double>(counts[i]);
  for (auto &s : out)
    for (const auto &b : out)
      if (b.classifier == s.classifier && b.input_set == "X")
        s.diff_vs_x = s.mean_acc - b.mean_acc;
  return out;
}

} // namespace kecae
