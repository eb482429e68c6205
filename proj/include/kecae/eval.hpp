#pragma once

#include "kecae/config.hpp"
#include "kecae/data.hpp"
#include "kecae/net.hpp"
#include "kecae/trainer.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kecae {

using FeatureRows = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// RBF-kernel SVM trained by SMO

struct ProbeOptions {
  double C = 1.0;
  double gamma = 0.0; // <= 0: 1 / (d * variance of all feature values)
  double tol = 1e-3;  // KKT violation tolerance
  std::size_t max_iter = 10'000'000;
};

struct ProbeModel {
  FeatureRows support;       // support vectors
  std::vector<double> coef;  // alpha_i * y_i
  double bias = 0.0;         // decision = sum coef_i K(s_i, x) - bias
  double gamma = 0.0;
  double C = 1.0;
  std::size_t iterations = 0;

  double decision(const std::vector<double> &x) const;
  /// Class index: 1 when the decision is positive, else 0.
  int predict(const std::vector<double> &x) const;
};

/// labels are class indices 0/1 (1 maps to the positive side). Needs at
/// least two samples per class.
ProbeModel probe_train(const FeatureRows &x, const std::vector<int> &labels,
                       const ProbeOptions &opts = {});
double probe_accuracy(const ProbeModel &m, const FeatureRows &x, const std::vector<int> &labels);

// ---------------------------------------------------------------------------
// Non-learned gap oracle

/// Joint-gap height in px from the row-mean profile: Otsu threshold, longest
/// interior run of dark rows, then the dip area divided by its depth.
/// std::nullopt when the image has no such gap.
std::optional<double> gap_width_estimate(const Image &img);

/// Distance from v to the closed interval r (0 inside).
double range_distance(double v, std::pair<double, double> r);

// ---------------------------------------------------------------------------
// Latent probes and the exchange oracle

struct LatentProbeResult {
  double acc_hK = 0.0;
  double acc_hU = 0.0;
};

/// Fits one probe on hK and one on hU of up to `per_class` items per class
/// from `fit`, then scores both on every item of `eval`.
LatentProbeResult latent_probe(KeCaeModel &model, const SplitSet &fit, const SplitSet &eval,
                               std::size_t per_class, const ProbeOptions &opts,
                               std::uint64_t seed);

struct ExchangeResult {
  std::size_t pairs = 0;
  std::size_t closer = 0;     // X1' nearer the KL-2 gap range than X^1
  std::size_t undetected = 0; // pairs where either estimate failed (counted as misses)
  double fraction() const { return pairs ? static_cast<double>(closer) / pairs : 0.0; }
};

/// Samples `n_pairs` distinct (KL-0, KL-2) pairs from `held_out` and compares
/// the gap estimate of X1' with that of the reconstruction X^1.
ExchangeResult exchange_semantics(KeCaeModel &model, const SplitSet &held_out,
                                  std::size_t n_pairs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Job runner

/// KECAE_THREADS, default 1.
std::size_t worker_count();

/// Runs job(0..count-1) on up to `workers` threads. The first exception is
/// rethrown after all workers stop.
void run_jobs(std::size_t count, const std::function<void(std::size_t)> &job,
              std::size_t workers);

// ---------------------------------------------------------------------------
// Experiments

struct GridCell {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double acc_hK = 0.0; // NaN when the cell diverged
  double acc_hU = 0.0;
  bool best = false;
};

/// Short training run per (lambda1, lambda2) cell; probes on the validation split.
std::vector<GridCell> grid_search(const RunConfig &cfg, const Splits &splits);
void write_grid_csv(const std::filesystem::path &path, const std::vector<GridCell> &cells);

struct SizeRow {
  std::size_t n = 0;
  double final_loss = 0.0; // final-epoch mean J_total, averaged over seeds
  double acc = 0.0;        // hK probe accuracy on validation, averaged over seeds
};

std::vector<SizeRow> sample_size_study(const RunConfig &cfg, const Splits &splits);
void write_sizes_csv(const std::filesystem::path &path, const std::vector<SizeRow> &rows);

/// Classifier trained from scratch on whole images.
class Classifier {
public:
  virtual ~Classifier() = default;
  virtual Tensor logits(const Tensor &images, Mode mode) = 0;
  virtual ParamGroup &params() = 0;
  virtual std::string name() const = 0;
};

/// "siamese_gap": the discriminator design on (lateral, mirrored medial)
/// patches. "small_cnn": four stride-2 conv blocks on the full image.
std::unique_ptr<Classifier> make_classifier(const std::string &kind, const ArchConfig &arch,
                                            std::uint64_t seed);

struct LabelledImage {
  Image image;
  Grade label;
};

struct ClassifierOptions {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double lr = 1e-3;
};

/// Trains on `train`, keeps the weights with the best validation accuracy
/// and returns their test accuracy.
double train_and_test_classifier(Classifier &clf, const std::vector<LabelledImage> &train,
                                 const std::vector<LabelledImage> &val,
                                 const std::vector<LabelledImage> &test,
                                 const ClassifierOptions &opts, std::uint64_t seed,
                                 std::size_t input_side);

struct AugRow {
  std::string classifier;
  std::string input_set; // X, X+Xhat, X+Xprime, X+Xhat+Xprime
  std::uint64_t seed = 0;
  double acc = 0.0;
};

inline const std::vector<std::string> &augment_input_sets() {
  static const std::vector<std::string> sets{"X", "X+Xhat", "X+Xprime", "X+Xhat+Xprime"};
  return sets;
}

/// Trains each classifier on the four input sets for cfg.aug_seeds seeds.
std::vector<AugRow> augmentation_eval(KeCaeModel &generator, const Splits &splits,
                                      const RunConfig &cfg,
                                      const std::vector<std::string> &classifiers = {
                                          "siamese_gap", "small_cnn"});
void write_augment_csv(const std::filesystem::path &path, const std::vector<AugRow> &rows);

/// Mean accuracy per (classifier, input_set), in first-seen order.
struct AugSummary {
  std::string classifier, input_set;
  double mean_acc = 0.0;
  double diff_vs_x = 0.0;
};
std::vector<AugSummary> summarize_augmentation(const std::vector<AugRow> &rows);

} // namespace kecae
