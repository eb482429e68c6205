#pragma once

#include "kecae/config.hpp"
#include "kecae/data.hpp"
#include "kecae/losses.hpp"
#include "kecae/net.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace kecae {

/// One training sample: x1 must be KL-0, x2 KL-2.
struct SamplePair {
  const Item *x1 = nullptr;
  const Item *x2 = nullptr;
};

/// Phases of one training step, in execution order.
enum class Phase {
  disc_update = 1, // CE on real patches, discriminator Adam step
  freeze,          // discriminator frozen
  reconstruct,     // encode both inputs, fuse, decode
  mse,
  exchange,        // swap hK, decode X1', X2'
  ce_swapped,      // CE on exchanged outputs with swapped labels
  lda,
  gen_update,      // generator Adam step
  unfreeze,
};

using PhaseObserver = std::function<void(Phase, const KeCaeModel &)>;

/// N×1×S×S tensor from item images (resampled to `side` when they differ).
Tensor images_to_tensor(const std::vector<const Item *> &items, std::size_t side);
Tensor images_to_tensor(const std::vector<Image> &images, std::size_t side);

struct EpochMetrics {
  std::size_t epoch = 0;
  LossReport mean; // mean of the step reports over the epoch
};

struct FitOptions {
  /// Stop (after checkpointing) once this many steps have run in total.
  std::optional<std::uint64_t> stop_after_step;
  /// Continue from run_dir/checkpoint when it exists.
  bool resume = false;
  /// Write checkpoints and metrics; off for throwaway runs.
  bool write_files = true;
};

class Trainer {
public:
  explicit Trainer(const TrainConfig &cfg);

  const TrainConfig &config() const { return cfg_; }
  KeCaeModel &model() { return *model_; }
  const KeCaeModel &model() const { return *model_; }

  /// One pass of the alternating update. Throws DataError on a mislabelled
  /// pair and DivergenceError on a non-finite loss, both before any update.
  LossReport train_step(const std::vector<SamplePair> &batch, std::uint64_t aug_seed,
                        const PhaseObserver &observer = {});

  /// Trains over `pairs` (indices into train.kl0 / train.kl2) for the
  /// configured epochs. Writes run_dir/metrics.csv, run_dir/steps.csv and
  /// run_dir/checkpoint/.
  void fit(const SplitSet &train, const std::vector<PairRef> &pairs,
           const std::filesystem::path &run_dir, const FitOptions &opts = {});

  const std::vector<EpochMetrics> &history() const { return history_; }
  const std::vector<LossReport> &step_losses() const { return step_losses_; }
  std::uint64_t global_step() const { return global_step_; }

  void save_checkpoint(const std::filesystem::path &dir) const;
  /// Restores weights, optimizer state and progress. The checkpoint's
  /// architecture must match this trainer's.
  void load_checkpoint(const std::filesystem::path &dir);

private:
  void write_metrics(const std::filesystem::path &run_dir) const;

  TrainConfig cfg_;
  std::unique_ptr<KeCaeModel> model_;
  Rng rng_; // draws one augmentation seed per step

  std::uint64_t global_step_ = 0;
  std::size_t epoch_ = 0;      // current epoch
  std::size_t next_batch_ = 0; // next batch index within the epoch
  LossReport epoch_sum_;
  std::size_t epoch_steps_ = 0;
  std::vector<EpochMetrics> history_;
  std::vector<LossReport> step_losses_;
};

/// Reads checkpoint_dir/config.txt.
TrainConfig read_checkpoint_config(const std::filesystem::path &dir);

/// Model with the checkpoint's architecture and weights.
std::unique_ptr<KeCaeModel> load_model(const std::filesystem::path &dir);
/// Loads weights into an existing model; throws DataError on any
/// architecture mismatch.
void load_weights(const std::filesystem::path &dir, KeCaeModel &model);

// ---------------------------------------------------------------------------

enum class OutputKind { recon1, recon2, exchanged1, exchanged2 };
std::string output_kind_name(OutputKind k);

struct GeneratedImage {
  Image image; // clamped to [0, 1]
  Grade label;
  OutputKind kind;
  std::string x1_id, x2_id;
};

/// Four outputs per pair in eval mode: X^1 (KL-0), X^2 (KL-2), X1' (KL-2),
/// X2' (KL-0).
std::vector<GeneratedImage> generate(KeCaeModel &model, const SplitSet &set,
                                     const std::vector<PairRef> &pairs,
                                     std::size_t batch_size = 32);

/// Flattened eval-mode latents, one row per item.
struct Latents {
  std::vector<std::vector<double>> hU, hK;
};
Latents encode_items(KeCaeModel &model, const std::vector<const Item *> &items,
                     std::size_t batch_size = 64);

} // namespace kecae
