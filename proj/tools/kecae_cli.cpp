// kecae: command-line front end for data generation, training and evaluation.

#include "kecae/config.hpp"
#include "kecae/errors.hpp"
#include "kecae/eval.hpp"
#include "kecae/gradcheck.hpp"
#include "kecae/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace kecae;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

// Flags shared by every subcommand. Precedence: built-in defaults, then the
// config file, then --preset, then the remaining flags.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string out;
};

struct Specific {
  std::optional<std::size_t> n;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda1, lambda2;
  std::string checkpoint;
  std::string set = "test";
  bool resume = false;
  std::string classifiers = "siamese_gap,small_cnn";
};

// Default of a config key, as shown in --help.
std::string def(const std::string &key) {
  for (const auto &k : config_keys())
    if (k.name == key)
      return k.default_value + " (config key: " + key + ")";
  return "(none)";
}

std::string plain_def(const std::string &key) {
  for (const auto &k : config_keys())
    if (k.name == key)
      return k.default_value;
  return "(none)";
}

void add_common(CLI::App *cmd, Common &c, const std::string &out_default) {
  cmd->add_option("--config", c.config, "key = value config file")->default_str("(none)");
  cmd->add_option("--seed", c.seed, "master seed")->default_str(plain_def("seed"));
  cmd->add_option("--preset", c.preset, "architecture preset")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->default_str(plain_def("preset"));
  cmd->add_option("--out", c.out, "output location")->default_str(out_default);
}

RunConfig resolve(const Common &c, const Specific &s) {
  RunConfig cfg;
  if (!c.config.empty())
    cfg = load_run_config(c.config);
  if (!c.preset.empty())
    set_config_key(cfg, "preset", c.preset);
  if (c.seed)
    cfg.train.seed = *c.seed;
  if (s.epochs)
    cfg.train.epochs = *s.epochs;
  if (s.lambda1)
    cfg.train.weights.lambda1 = *s.lambda1;
  if (s.lambda2)
    cfg.train.weights.lambda2 = *s.lambda2;
  cfg.validate();
  return cfg;
}

fs::path out_or(const Common &c, const std::string &fallback) {
  return c.out.empty() ? fs::path(fallback) : fs::path(c.out);
}

void echo_config(const fs::path &dir, const RunConfig &cfg) {
  fs::create_directories(dir);
  std::ofstream f(dir / "config.cfg");
  f << "# effective configuration\n" << run_config_text(cfg);
  if (!f)
    throw DataError("cannot write " + (dir / "config.cfg").string());
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find(',', start), s.size());
    if (end > start)
      out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

const SplitSet &pick_set(const Splits &s, const std::string &name) {
  if (name == "train")
    return s.train;
  if (name == "val")
    return s.val;
  if (name == "test")
    return s.test;
  throw UsageError("--set must be train, val or test, got '" + name + "'");
}

std::string checkpoint_path(const Specific &s, const RunConfig &cfg) {
  return s.checkpoint.empty() ? cfg.checkpoint : s.checkpoint;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common &c, const Specific &s) {
  const RunConfig cfg = resolve(c, s);
  const fs::path out = out_or(c, cfg.data_dir);
  SynthOptions opts;
  opts.noise_sigma = cfg.noise_sigma;
  SplitSet set = generate_items(std::max(cfg.kl0_count, cfg.kl2_count),
                                cfg.train.arch.input_side, cfg.train.seed, opts);
  set.kl0.resize(cfg.kl0_count);
  set.kl2.resize(cfg.kl2_count);
  write_item_set(out, set);
  echo_config(out, cfg);
  std::printf("wrote %zu KL-0 and %zu KL-2 images (%zu px) to %s\n", set.kl0.size(),
              set.kl2.size(), cfg.train.arch.input_side, out.string().c_str());
  return ok;
}

int cmd_split(const Common &c, const Specific &s) {
  const RunConfig cfg = resolve(c, s);
  const SplitSet items = read_item_set(cfg.data_dir);
  const Splits splits = split_oversample(items.kl0, items.kl2, cfg.train.seed);
  const fs::path out = out_or(c, cfg.splits_dir);
  write_splits(out, splits);
  echo_config(out, cfg);
  std::printf("train %zu/%zu  val %zu/%zu  test %zu/%zu (KL-0/KL-2) -> %s\n",
              splits.train.kl0.size(), splits.train.kl2.size(), splits.val.kl0.size(),
              splits.val.kl2.size(), splits.test.kl0.size(), splits.test.kl2.size(),
              out.string().c_str());
  return ok;
}

int cmd_pairs(const Common &c, const Specific &s) {
  const RunConfig cfg = resolve(c, s);
  const Splits splits = read_splits(cfg.splits_dir);
  const PairIndex index = make_pairs(splits.train.kl0.size(), splits.train.kl2.size());
  const std::size_t n = s.n.value_or(cfg.train.pairs);
  const auto pairs = sample_pairs(index, n, cfg.train.seed);
  const fs::path out = out_or(c, cfg.pairs_file);
  write_pairs_csv(out, splits.train, pairs);
  std::printf("sampled %zu of %llu pairs -> %s\n", pairs.size(),
              static_cast<unsigned long long>(index.size()), out.string().c_str());
  return ok;
}

int cmd_train(const Common &c, const Specific &s) {
  RunConfig cfg = resolve(c, s);
  const Splits splits = read_splits(cfg.splits_dir);
  std::vector<PairRef> pairs;
  if (s.n) {
    cfg.train.pairs = *s.n;
    pairs = sample_pairs(make_pairs(splits.train.kl0.size(), splits.train.kl2.size()), *s.n,
                         cfg.train.seed);
  } else if (fs::exists(cfg.pairs_file)) {
    pairs = read_pairs_csv(cfg.pairs_file, splits.train);
  } else {
    pairs = sample_pairs(make_pairs(splits.train.kl0.size(), splits.train.kl2.size()),
                         cfg.train.pairs, cfg.train.seed);
  }
  const fs::path out = out_or(c, fs::path(cfg.checkpoint).parent_path().string());
  echo_config(out, cfg);
  Trainer trainer(cfg.train);
  FitOptions opts;
  opts.resume = s.resume;
  trainer.fit(splits.train, pairs, out, opts);
  const auto &h = trainer.history();
  if (!h.empty())
    std::printf("trained %zu epochs on %zu pairs: J_MSE %.6g -> %.6g; run dir %s\n", h.size(),
                pairs.size(), h.front().mean.j_mse, h.back().mean.j_mse, out.string().c_str());
  return ok;
}

int cmd_generate(const Common &c, const Specific &s) {
  const RunConfig cfg = resolve(c, s);
  const Splits splits = read_splits(cfg.splits_dir);
  const SplitSet &set = pick_set(splits, s.set);
  auto model = load_model(checkpoint_path(s, cfg));
  const std::size_t n = s.n.value_or(cfg.held_out_pairs);
  const auto pairs = sample_pairs(make_pairs(set.kl0.size(), set.kl2.size()), n, cfg.train.seed);
  const auto outputs = generate(*model, set, pairs);
  const fs::path out = out_or(c, "runs/generated");
  fs::create_directories(out);
  std::ofstream labels(out / "labels.csv");
  labels << "file,kind,label,x1_id,x2_id\n";
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto &g = outputs[i];
    char name[64];
    std::snprintf(name, sizeof name, "%06zu_%s.pgm", i / 4, output_kind_name(g.kind).c_str());
    write_pgm(out / name, g.image);
    labels << name << ',' << output_kind_name(g.kind) << ',' << grade_name(g.label) << ','
           << g.x1_id << ',' << g.x2_id << '\n';
  }
  if (!labels)
    throw DataError("cannot write " + (out / "labels.csv").string());
  echo_config(out, cfg);
  std::printf("wrote %zu images for %zu pairs to %s\n", outputs.size(), pairs.size(),
              out.string().c_str());
  return ok;
}

int cmd_probe(const Common &c, const Specific &s) {
  const RunConfig cfg = resolve(c, s);
  const Splits splits = read_splits(cfg.splits_dir);
  const SplitSet &eval = pick_set(splits, s.set);
  auto model = load_model(checkpoint_path(s, cfg));
  ProbeOptions po;
  po.C = cfg.probe_c;
  const auto r = latent_probe(*model, splits.train, eval, cfg.probe_per_class, po, cfg.train.seed);
  const std::size_t avail = eval.kl0.size() * eval.kl2.size();
  const auto ex =
      exchange_semantics(*model, eval, std::min(cfg.held_out_pairs, avail), cfg.train.seed);
  std::printf("probe accuracy on %s: hK %.4f  hU %.4f  (difference %.4f)\n", s.set.c_str(),
              r.acc_hK, r.acc_hU, r.acc_hK - r.acc_hU);
  std::printf("exchange: X1' nearer the KL-2 gap range in %zu of %zu pairs (%.1f%%, %zu "
              "undetected)\n",
              ex.closer, ex.pairs, 100.0 * ex.fraction(), ex.undetected);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream f(fs::path(c.out) / "probe.csv");
    f << "set,acc_hK,acc_hU,exchange_pairs,exchange_closer,exchange_undetected\n"
      << s.set << ',' << r.acc_hK << ',' << r.acc_hU << ',' << ex.pairs << ',' << ex.closer
      << ',' << ex.undetected << '\n';
    echo_config(c.out, cfg);
  }
  return ok;
}

int cmd_grid(const Common &c, const Specific &s) {
  RunConfig cfg = resolve(c, s);
  if (s.epochs)
    cfg.grid_epochs = *s.epochs;
  if (s.n)
    cfg.grid_pairs = *s.n;
  const Splits splits = read_splits(cfg.splits_dir);
  const fs::path out = out_or(c, "runs/grid");
  echo_config(out, cfg);
  const auto cells = grid_search(cfg, splits);
  write_grid_csv(out / "grid.csv", cells);
  for (const auto &cell : cells)
    if (cell.best)
      std::printf("best cell: lambda1=%g lambda2=%g acc_hK=%.4f\n", cell.lambda1, cell.lambda2,
                  cell.acc_hK);
  std::printf("wrote %zu cells to %s\n", cells.size(), (out / "grid.csv").string().c_str());
  return ok;
}

int cmd_sizes(const Common &c, const Specific &s) {
  RunConfig cfg = resolve(c, s);
  if (s.epochs)
    cfg.size_epochs = *s.epochs;
  const Splits splits = read_splits(cfg.splits_dir);
  const fs::path out = out_or(c, "runs/sizes");
  echo_config(out, cfg);
  const auto rows = sample_size_study(cfg, splits);
  write_sizes_csv(out / "sizes.csv", rows);
  for (const auto &r : rows)
    std::printf("N=%zu final_loss=%.6g acc=%.4f\n", r.n, r.final_loss, r.acc);
  return ok;
}

int cmd_augeval(const Common &c, const Specific &s) {
  RunConfig cfg = resolve(c, s);
  if (s.epochs)
    cfg.clf_epochs = *s.epochs;
  if (s.n)
    cfg.aug_pairs = *s.n;
  const Splits splits = read_splits(cfg.splits_dir);
  auto model = load_model(checkpoint_path(s, cfg));
  const fs::path out = out_or(c, "runs/augeval");
  echo_config(out, cfg);
  const auto rows = augmentation_eval(*model, splits, cfg, split_list(s.classifiers));
  write_augment_csv(out / "augment.csv", rows);
  std::printf("%-12s %-16s %9s %9s\n", "classifier", "input_set", "mean_acc", "vs_X");
  for (const auto &r : summarize_augmentation(rows))
    std::printf("%-12s %-16s %9.4f %+9.4f\n", r.classifier.c_str(), r.input_set.c_str(),
                r.mean_acc, r.diff_vs_x);
  return ok;
}

int cmd_gradcheck(const Common &c, const Specific &) {
  const std::uint64_t seed = c.seed.value_or(1);
  bool pass = true;
  for (const auto &r : run_gradcheck_suite(seed)) {
    const bool good = r.max_rel_error < 1e-4;
    pass = pass && good;
    std::printf("%-28s max rel error %.3e %s\n", r.name.c_str(), r.max_rel_error,
                good ? "ok" : "FAIL");
  }
  for (const auto &r : run_adjoint_suite(seed)) {
    const bool good = r.error < 1e-9;
    pass = pass && good;
    std::printf("%-28s adjoint error %.3e %s\n", r.name.c_str(), r.error, good ? "ok" : "FAIL");
  }
  return pass ? ok : numeric;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"kecae: key-exchange convolutional auto-encoder toolkit"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.\n"
             "KECAE_THREADS caps the worker threads of grid, sizes and augeval (default 1).");

  Common common;
  Specific flags;
  using Handler = int (*)(const Common &, const Specific &);
  std::vector<std::pair<CLI::App *, Handler>> commands;
  auto add = [&](const char *name, const char *desc, const std::string &out_default,
                 Handler h) {
    CLI::App *cmd = app.add_subcommand(name, desc);
    add_common(cmd, common, out_default);
    commands.emplace_back(cmd, h);
    return cmd;
  };
  auto add_n = [&](CLI::App *cmd, const char *what, const std::string &def) {
    cmd->add_option("--n", flags.n, what)->default_str(def);
  };
  auto add_ckpt = [&](CLI::App *cmd) {
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint directory")
        ->default_str(def("checkpoint"));
  };
  auto add_set = [&](CLI::App *cmd) {
    cmd->add_option("--set", flags.set, "split to use")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->default_str("test");
  };
  auto add_lambdas = [&](CLI::App *cmd) {
    cmd->add_option("--lambda1", flags.lambda1, "weight of the exchanged-label CE term")
        ->default_str(def("lambda1"));
    cmd->add_option("--lambda2", flags.lambda2, "weight of the Fisher term")->default_str(def("lambda2"));
  };

  add("gen-data", "render the synthetic dataset", def("data_dir"),
      cmd_gen_data);
  add("split", "7:1:2 split with minority oversampling of the training part",
      def("splits_dir"), cmd_split);
  CLI::App *pairs = add("pairs", "sample KL-0/KL-2 training pairs",
                        def("pairs_file"), cmd_pairs);
  add_n(pairs, "number of pairs", def("pairs"));

  CLI::App *train = add("train", "train the auto-encoder", "runs/train", cmd_train);
  add_n(train, "sample this many pairs instead of reading pairs_file", "(pairs_file)");
  train->add_option("--epochs", flags.epochs, "training epochs")->default_str(def("epochs"));
  add_lambdas(train);
  train->add_flag("--resume", flags.resume, "continue from <out>/checkpoint")->default_str("false");

  CLI::App *gen = add("generate", "write reconstructed and exchanged images",
                      "runs/generated", cmd_generate);
  add_n(gen, "number of pairs", def("probe.held_out_pairs"));
  add_ckpt(gen);
  add_set(gen);

  CLI::App *probe = add("probe", "latent probes and the exchange oracle",
                        "(print only; with --out also writes probe.csv)", cmd_probe);
  add_ckpt(probe);
  add_set(probe);

  CLI::App *grid = add("grid", "lambda1 x lambda2 grid search", "runs/grid", cmd_grid);
  add_n(grid, "pairs per cell", def("grid.pairs"));
  grid->add_option("--epochs", flags.epochs, "epochs per cell")->default_str(def("grid.epochs"));

  CLI::App *sizes = add("sizes", "sample-size study", "runs/sizes", cmd_sizes);
  sizes->add_option("--epochs", flags.epochs, "epochs per run")->default_str(def("sizes.epochs"));
  add_lambdas(sizes);

  CLI::App *aug = add("augeval", "classifier accuracy with generated data", "runs/augeval",
                      cmd_augeval);
  add_n(aug, "pairs used to generate images", def("augeval.pairs"));
  aug->add_option("--epochs", flags.epochs, "classifier epochs")->default_str(def("augeval.epochs"));
  aug->add_option("--classifiers", flags.classifiers, "comma-separated list")
      ->default_str("siamese_gap,small_cnn");
  add_ckpt(aug);

  add("gradcheck", "finite-difference and adjointness checks", "(print only)", cmd_gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e, std::cout, std::cerr);
    return usage;
  }

  try {
    for (const auto &[cmd, handler] : commands)
      if (cmd->parsed())
        return handler(common, flags);
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const DivergenceError &e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return numeric;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const fs::filesystem_error &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const std::out_of_range &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const std::invalid_argument &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return usage;
  }
  return usage;
}
