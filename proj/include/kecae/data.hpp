#pragma once

#include "kecae/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace kecae {

/// Square grayscale image, row-major, nominal range [0, 1].
struct Image {
  std::size_t side = 0;
  std::vector<double> pixels;

  Image() = default;
  explicit Image(std::size_t s, double fill = 0.0) : side(s), pixels(s * s, fill) {}
  double &at(std::size_t row, std::size_t col) { return pixels[row * side + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * side + col]; }
};

Image flip_horizontal(const Image &img);
/// Bilinear resample to side x side (pixel centres aligned).
Image resize(const Image &img, std::size_t side);

/// The two Kellgren-Lawrence grades the pipeline works with.
enum class Grade { kl0 = 0, kl2 = 2 };

/// Class index used by classifiers: KL-0 -> 0, KL-2 -> 1.
inline int class_index(Grade g) { return g == Grade::kl0 ? 0 : 1; }
inline Grade other_grade(Grade g) { return g == Grade::kl0 ? Grade::kl2 : Grade::kl0; }
std::string grade_name(Grade g); // "kl0" / "kl2"
Grade parse_grade(const std::string &s);

// ---------------------------------------------------------------------------
// Procedural pseudo-radiographs

struct SynthImage {
  Image image;
  Grade grade = Grade::kl0;
  double gap_width = 0.0; // px, mean vertical distance between the bone edges
  double osteo_amp = 0.0; // px, horizontal reach of the marginal bumps
  std::uint64_t seed = 0;
};

struct SynthOptions {
  bool noise = true;
  double noise_sigma = 0.02;
};

/// Two textured bone bands separated by a horizontal joint gap whose width is
/// drawn from the grade's range (KL-0: [0.18S, 0.28S], KL-2: [0.06S, 0.12S]).
/// KL-2 adds marginal bumps of amplitude in [0.02S, 0.05S] at both bone
/// margins next to the joint line. Everything is a function of the seed.
SynthImage synth_generate(Grade grade, std::uint64_t seed, std::size_t side,
                          const SynthOptions &opts = {});

/// Inclusive gap-width range of a grade at a given side.
std::pair<double, double> gap_range(Grade grade, std::size_t side);

// ---------------------------------------------------------------------------
// Items, splits and pairs

/// One dataset entry. `source` identifies the original sample; bootstrap
/// duplicates share the source of the item they copy.
struct Item {
  std::string id;
  std::string source;
  Grade grade = Grade::kl0;
  double gap_width = 0.0;
  double osteo_amp = 0.0;
  std::uint64_t seed = 0;
  Image image;
};

struct SplitSet {
  std::vector<Item> kl0;
  std::vector<Item> kl2;
  std::vector<Item> &of(Grade g) { return g == Grade::kl0 ? kl0 : kl2; }
  const std::vector<Item> &of(Grade g) const { return g == Grade::kl0 ? kl0 : kl2; }
};

struct Splits {
  SplitSet train, val, test;
};

/// Balances the classes by bootstrap and partitions each class 7:1:2.
///
/// Every class ends with as many items as the largest class. Validation and
/// test slots are filled with distinct originals; the training slot takes the
/// remaining originals and is topped up with draws-with-replacement from those
/// training originals, so duplicates exist only in the training split.
Splits split_oversample(std::vector<Item> kl0, std::vector<Item> kl2, std::uint64_t seed);

/// Target (train, val, test) counts for a class of `total` items.
struct SplitCounts {
  std::size_t train, val, test;
};
SplitCounts split_counts(std::size_t total);

/// Lazily enumerated Cartesian product of KL-0 and KL-2 indices.
class PairIndex {
public:
  PairIndex(std::size_t n0, std::size_t n2) : n0_(n0), n2_(n2) {}
  std::uint64_t size() const { return static_cast<std::uint64_t>(n0_) * n2_; }
  std::pair<std::size_t, std::size_t> at(std::uint64_t i) const {
    return {static_cast<std::size_t>(i / n2_), static_cast<std::size_t>(i % n2_)};
  }
  std::size_t n0() const { return n0_; }
  std::size_t n2() const { return n2_; }

private:
  std::size_t n0_, n2_;
};

PairIndex make_pairs(std::size_t n0, std::size_t n2);

/// (KL-0 index, KL-2 index).
using PairRef = std::pair<std::size_t, std::size_t>;

/// Uniform sample of n distinct pairs, in random order. n == index.size()
/// yields a permutation of every pair.
std::vector<PairRef> sample_pairs(const PairIndex &index, std::uint64_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Patches

/// floor(0.43 * side); a 299 px image gives 128 px patches.
std::size_t patch_side(std::size_t image_side);

struct PatchPair {
  Image lateral; // left edge, as is
  Image medial;  // right edge, mirrored left-right
};

/// Vertically centred square patches at the left and right image edges.
PatchPair extract_patches(const Image &img);

// ---------------------------------------------------------------------------
// Augmentation applied to discriminator inputs

struct AugmentOptions {
  double probability = 0.5;
  double max_rotation_deg = 10.0;
  double max_brightness = 0.1;
  double max_contrast = 0.1;
};

/// Random rotation (bilinear, edge clamped), brightness shift and contrast
/// scaling, each applied independently with the given probability.
Image augment(const Image &img, Rng &rng, const AugmentOptions &opts = {});

// ---------------------------------------------------------------------------
// PGM (binary P5) I/O and dataset layout

/// Writes an 8-bit P5 file; values must lie in [0, 1] and are rounded half
/// away from zero after scaling by 255.
void write_pgm(const std::filesystem::path &path, const Image &img);
/// Same as write_pgm after clamping values to [0, 1].
void write_pgm_clamped(const std::filesystem::path &path, const Image &img);
/// Reads a square P5 file with maxval <= 255.
Image read_pgm(const std::filesystem::path &path);
std::vector<unsigned char> encode_pgm(const Image &img);
Image decode_pgm(const std::vector<unsigned char> &bytes);

/// attributes.csv: id,class,gap_width,osteo_amp,seed
void write_attributes(const std::filesystem::path &path, const std::vector<const Item *> &items);
std::vector<Item> read_attributes(const std::filesystem::path &path);

/// Writes `dir/kl0/<id>.pgm`, `dir/kl2/<id>.pgm` and `dir/attributes.csv`.
void write_item_set(const std::filesystem::path &dir, const SplitSet &set);
/// Reads a directory written by write_item_set (images included).
SplitSet read_item_set(const std::filesystem::path &dir);

void write_splits(const std::filesystem::path &dir, const Splits &splits);
Splits read_splits(const std::filesystem::path &dir);

/// Pair list CSV with header `kl0_id,kl2_id`.
void write_pairs_csv(const std::filesystem::path &path, const SplitSet &set,
                     const std::vector<PairRef> &pairs);
std::vector<PairRef> read_pairs_csv(const std::filesystem::path &path, const SplitSet &set);

/// Generates `per_class` originals of each grade with ids kl0_000000, ...
SplitSet generate_items(std::size_t per_class, std::size_t side, std::uint64_t seed,
                        const SynthOptions &opts = {});

} // namespace kecae
