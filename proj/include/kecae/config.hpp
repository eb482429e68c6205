#pragma once

#include "kecae/data.hpp"
#include "kecae/losses.hpp"
#include "kecae/net.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kecae {

struct TrainConfig {
  ArchConfig arch;
  std::size_t epochs = 30;
  std::size_t batch_size = 30;
  double lr_gen = 1e-4;
  double lr_disc = 1e-5;
  LossWeights weights;
  double lda_eps = kLdaEps;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0; // steps; 0 = end of each epoch only
  std::size_t pairs = 2000;         // sampled pair count N
  bool augment = true;              // augment discriminator inputs
  AugmentOptions aug;

  void validate() const;
};

/// Everything a CLI run can set: training, dataset layout and evaluation.
struct RunConfig {
  TrainConfig train;

  // synthetic data
  std::size_t kl0_count = 571;
  std::size_t kl2_count = 480;
  double noise_sigma = 0.02;

  // locations (relative paths resolve against the working directory)
  std::string data_dir = "runs/data";
  std::string splits_dir = "runs/splits";
  std::string pairs_file = "runs/pairs.csv";
  std::string checkpoint = "runs/train/checkpoint";

  // probes
  std::size_t probe_per_class = 200;
  double probe_c = 1.0;
  std::size_t held_out_pairs = 200;

  // grid search
  std::vector<double> grid_values{1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::size_t grid_epochs = 10;
  std::size_t grid_pairs = 2000;

  // sample-size study
  std::vector<std::size_t> sizes{500, 1000, 5000, 10000};
  std::size_t size_seeds = 3;
  std::size_t size_epochs = 5;

  // augmentation study
  std::size_t aug_seeds = 3;
  std::size_t aug_pairs = 400;
  std::size_t clf_epochs = 15;
  std::size_t clf_batch = 32;
  double clf_lr = 1e-3;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  bool training; // part of TrainConfig (stored with checkpoints)
};

/// Every accepted key with its default, in a stable order.
const std::vector<ConfigKey> &config_keys();

/// Sets one key; unknown keys and malformed values raise UsageError.
void set_config_key(RunConfig &cfg, const std::string &key, const std::string &value);
std::string get_config_key(const RunConfig &cfg, const std::string &key);

/// Applies `key = value` lines. `#` starts a comment. A `preset` line is
/// applied before any other key regardless of its position.
void apply_config_text(RunConfig &cfg, const std::string &text, const std::string &origin);
RunConfig load_run_config(const std::filesystem::path &path);

std::string run_config_text(const RunConfig &cfg);
std::string train_config_text(const TrainConfig &cfg);
TrainConfig parse_train_config(const std::string &text, const std::string &origin);

} // namespace kecae
