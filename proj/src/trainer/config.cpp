#include "kecae/config.hpp"

#include "kecae/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace kecae {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string &key, const std::string &v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
    throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string &key, const std::string &v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
    throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on")
    return true;
  if (v == "0" || v == "false" || v == "no" || v == "off")
    return false;
  throw UsageError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

template <class T, class F> std::vector<T> parse_list(const std::string &v, F parse_one) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_one(trim(item)));
  return out;
}

template <class T, class F> std::string join(const std::vector<T> &xs, F fmt_one) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i)
    out += (i ? "," : "") + fmt_one(xs[i]);
  return out;
}

struct KeyDef {
  const char *name;
  const char *help;
  bool training;
  std::function<void(RunConfig &, const std::string &, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

#define KECAE_SIZE(field, key, help, train)                                                        \
  KeyDef {                                                                                         \
    key, help, train,                                                                              \
        [](RunConfig &c, const std::string &k, const std::string &v) {                             \
          c.field = static_cast<std::size_t>(parse_u64(k, v));                                     \
        },                                                                                         \
        [](const RunConfig &c) { return std::to_string(c.field); }                                 \
  }
#define KECAE_DOUBLE(field, key, help, train)                                                      \
  KeyDef {                                                                                         \
    key, help, train,                                                                              \
        [](RunConfig &c, const std::string &k, const std::string &v) {                             \
          c.field = parse_double(k, v);                                                            \
        },                                                                                         \
        [](const RunConfig &c) { return fmt(c.field); }                                            \
  }
#define KECAE_STRING(field, key, help)                                                             \
  KeyDef {                                                                                         \
    key, help, false, [](RunConfig &c, const std::string &, const std::string &v) { c.field = v; }, \
        [](const RunConfig &c) { return c.field; }                                                 \
  }

const std::vector<KeyDef> &key_defs() {
  static const std::vector<KeyDef> defs = {
      {"preset", "architecture preset (paper|desk); resets every arch.* key", true,
       [](RunConfig &c, const std::string &, const std::string &v) {
         c.train.arch = ArchConfig::from_preset(v);
       },
       [](const RunConfig &c) { return c.train.arch.preset; }},
      KECAE_SIZE(train.arch.input_side, "arch.input_side", "encoder input side in px", true),
      {"arch.block_channels", "encoder block widths, comma separated", true,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.train.arch.block_channels = parse_list<std::size_t>(
             v, [&](const std::string &s) { return static_cast<std::size_t>(parse_u64(k, s)); });
       },
       [](const RunConfig &c) {
         return join(c.train.arch.block_channels, [](std::size_t x) { return std::to_string(x); });
       }},
      KECAE_SIZE(train.arch.latent_depth, "arch.latent_depth", "latent depth D of hU and hK",
                 true),
      {"arch.disc_channels", "discriminator block widths, comma separated", true,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.train.arch.disc_channels = parse_list<std::size_t>(
             v, [&](const std::string &s) { return static_cast<std::size_t>(parse_u64(k, s)); });
       },
       [](const RunConfig &c) {
         return join(c.train.arch.disc_channels, [](std::size_t x) { return std::to_string(x); });
       }},
      KECAE_DOUBLE(train.arch.leaky_slope, "arch.leaky_slope", "LeakyReLU negative slope", true),
      KECAE_SIZE(train.epochs, "epochs", "training epochs (one pass over the sampled pairs)",
                 true),
      KECAE_SIZE(train.batch_size, "batch_size", "pairs per step (>= 2)", true),
      KECAE_DOUBLE(train.lr_gen, "lr_gen", "Adam learning rate of encoder+decoder", true),
      KECAE_DOUBLE(train.lr_disc, "lr_disc", "Adam learning rate of the discriminator", true),
      KECAE_DOUBLE(train.weights.lambda1, "lambda1", "weight of the exchanged-label CE term",
                   true),
      KECAE_DOUBLE(train.weights.lambda2, "lambda2", "weight of the Fisher separation term", true),
      KECAE_DOUBLE(train.lda_eps, "lda_eps", "denominator epsilon of the Fisher term", true),
      {"seed", "master seed", true,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.train.seed = parse_u64(k, v);
       },
       [](const RunConfig &c) { return std::to_string(c.train.seed); }},
      KECAE_SIZE(train.checkpoint_every, "checkpoint_every",
                 "checkpoint period in steps (0 = end of each epoch)", true),
      KECAE_SIZE(train.pairs, "pairs", "sampled training pair count N", true),
      {"augment", "augment discriminator inputs (0|1)", true,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.train.augment = parse_bool(k, v);
       },
       [](const RunConfig &c) { return std::string(c.train.augment ? "1" : "0"); }},
      KECAE_DOUBLE(train.aug.probability, "aug.probability", "chance each transform fires", true),
      KECAE_DOUBLE(train.aug.max_rotation_deg, "aug.rotation", "max rotation in degrees", true),
      KECAE_DOUBLE(train.aug.max_brightness, "aug.brightness", "max brightness shift", true),
      KECAE_DOUBLE(train.aug.max_contrast, "aug.contrast", "max relative contrast change", true),

      KECAE_SIZE(kl0_count, "data.kl0_count", "synthetic KL-0 originals", false),
      KECAE_SIZE(kl2_count, "data.kl2_count", "synthetic KL-2 originals", false),
      KECAE_DOUBLE(noise_sigma, "data.noise_sigma", "synthetic pixel noise sigma", false),
      KECAE_STRING(data_dir, "data_dir", "generated dataset directory"),
      KECAE_STRING(splits_dir, "splits_dir", "train/val/test directory"),
      KECAE_STRING(pairs_file, "pairs_file", "training pair list"),
      KECAE_STRING(checkpoint, "checkpoint", "checkpoint directory used by generate/probe/augeval"),

      KECAE_SIZE(probe_per_class, "probe.per_class", "training latents per class for the probe",
                 false),
      KECAE_DOUBLE(probe_c, "probe.C", "SVM penalty C", false),
      KECAE_SIZE(held_out_pairs, "probe.held_out_pairs", "test pairs for the exchange oracle",
                 false),
      {"grid.values", "lambda values per grid axis, comma separated", false,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.grid_values = parse_list<double>(v, [&](const std::string &s) {
           return parse_double(k, s);
         });
       },
       [](const RunConfig &c) { return join(c.grid_values, [](double x) { return fmt(x); }); }},
      KECAE_SIZE(grid_epochs, "grid.epochs", "training epochs per grid cell", false),
      KECAE_SIZE(grid_pairs, "grid.pairs", "sampled pairs per grid cell", false),
      {"sizes.values", "pair counts N for the sample-size study, comma separated", false,
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.sizes = parse_list<std::size_t>(
             v, [&](const std::string &s) { return static_cast<std::size_t>(parse_u64(k, s)); });
       },
       [](const RunConfig &c) {
         return join(c.sizes, [](std::size_t x) { return std::to_string(x); });
       }},
      KECAE_SIZE(size_seeds, "sizes.seeds", "seeds per N", false),
      KECAE_SIZE(size_epochs, "sizes.epochs", "training epochs per N", false),
      KECAE_SIZE(aug_seeds, "augeval.seeds", "classifier seeds", false),
      KECAE_SIZE(aug_pairs, "augeval.pairs", "training pairs used to synthesize images", false),
      KECAE_SIZE(clf_epochs, "augeval.epochs", "classifier training epochs", false),
      KECAE_SIZE(clf_batch, "augeval.batch_size", "classifier batch size", false),
      KECAE_DOUBLE(clf_lr, "augeval.lr", "classifier Adam learning rate", false),
  };
  return defs;
}

#undef KECAE_SIZE
#undef KECAE_DOUBLE
#undef KECAE_STRING

const KeyDef &find_key(const std::string &key) {
  for (const auto &d : key_defs())
    if (key == d.name)
      return d;
  throw UsageError("unknown config key '" + key + "'");
}

} // namespace

void TrainConfig::validate() const {
  arch.validate();
  weights.validate();
  if (batch_size < 2)
    throw UsageError("batch_size must be >= 2 (batch norm needs two samples), got " +
                     std::to_string(batch_size));
  if (!(lr_gen > 0.0) || !(lr_disc > 0.0))
    throw UsageError("learning rates must be positive");
  if (!(lda_eps > 0.0))
    throw UsageError("lda_eps must be positive");
  if (epochs == 0)
    throw UsageError("epochs must be positive");
  if (pairs < batch_size)
    throw UsageError("pairs (" + std::to_string(pairs) + ") must be >= batch_size (" +
                     std::to_string(batch_size) + ")");
  if (aug.probability < 0.0 || aug.probability > 1.0)
    throw UsageError("aug.probability must lie in [0, 1]");
}

void RunConfig::validate() const {
  train.validate();
  if (kl0_count < 10 || kl2_count < 10)
    throw UsageError("data.kl0_count and data.kl2_count must be >= 10");
  if (grid_values.empty() || sizes.empty())
    throw UsageError("grid.values and sizes.values must not be empty");
  for (double v : grid_values)
    if (!(v >= 0.0))
      throw UsageError("grid.values must be >= 0");
  if (size_seeds == 0 || aug_seeds == 0)
    throw UsageError("seed counts must be positive");
}

const std::vector<ConfigKey> &config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    const RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const auto &d : key_defs())
      out.push_back({d.name, d.get(defaults), d.help, d.training});
    return out;
  }();
  return keys;
}

void set_config_key(RunConfig &cfg, const std::string &key, const std::string &value) {
  find_key(key).set(cfg, key, value);
}

std::string get_config_key(const RunConfig &cfg, const std::string &key) {
  return find_key(key).get(cfg);
}

void apply_config_text(RunConfig &cfg, const std::string &text, const std::string &origin) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    entries.emplace_back(lineno, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  auto apply = [&](const auto &e) {
    const auto &[n, k, v] = e;
    try {
      set_config_key(cfg, k, v);
    } catch (const UsageError &err) {
      throw UsageError(origin + ":" + std::to_string(n) + ": " + err.what());
    }
  };
  for (const auto &e : entries)
    if (std::get<1>(e) == "preset")
      apply(e);
  for (const auto &e : entries)
    if (std::get<1>(e) != "preset")
      apply(e);
}

RunConfig load_run_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

std::string run_config_text(const RunConfig &cfg) {
  std::string out;
  for (const auto &d : key_defs())
    out += std::string(d.name) + " = " + d.get(cfg) + "\n";
  return out;
}

std::string train_config_text(const TrainConfig &cfg) {
  RunConfig rc;
  rc.train = cfg;
  std::string out;
  for (const auto &d : key_defs())
    if (d.training)
      out += std::string(d.name) + " = " + d.get(rc) + "\n";
  return out;
}

TrainConfig parse_train_config(const std::string &text, const std::string &origin) {
  RunConfig rc;
  apply_config_text(rc, text, origin);
  return rc.train;
}

} // namespace kecae
