#pragma once

#include "kecae/ops.hpp"
#include "kecae/optim.hpp"
#include "kecae/rng.hpp"
#include "kecae/tensor.hpp"

#include <string>
#include <vector>

namespace kecae {

/// Network shapes. Each encoder block halves the spatial extent, so
/// input_side must be divisible by 2^block_channels.size().
struct ArchConfig {
  std::string preset = "desk";
  std::size_t input_side = 64;
  std::vector<std::size_t> block_channels{16, 32, 64, 64, 128, 128};
  std::size_t latent_depth = 64;
  std::size_t enc_kernel = 3;
  std::size_t dec_kernel = 4;
  double leaky_slope = 0.2;
  std::vector<std::size_t> disc_channels{16, 32, 64, 64};

  static ArchConfig desk();
  /// Seven blocks of 32..2048 channels on a 256 px ROI (299 px ROIs are
  /// resized to 256 before encoding so the halving chain stays exact).
  static ArchConfig paper();
  static ArchConfig from_preset(const std::string &name);

  void validate() const;
  std::size_t latent_side() const;
  std::size_t patch_side() const;
  bool operator==(const ArchConfig &) const = default;
};

/// Conv (or deconv) -> batch norm -> LeakyReLU.
class ConvBlock {
public:
  ConvBlock() = default;
  ConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
            std::size_t pad, bool transposed, double slope, Rng &rng);

  Tensor forward(const Tensor &x, Mode mode);
  void register_into(ParamGroup &group, const std::string &prefix);

private:
  Tensor weight_, bias_, gamma_, beta_;
  BatchNormState bn_;
  std::size_t stride_ = 1, pad_ = 0;
  bool transposed_ = false;
  double slope_ = 0.2;
};

/// Unrelated (hU) and key (hK) feature maps of a batch, both N×D×h×w.
struct LatentPair {
  Tensor hU;
  Tensor hK;
};

/// hU ⊕ hK, the element-wise sum.
Tensor fuse(const LatentPair &p);

/// (h1U ⊕ h2K, h2U ⊕ h1K).
std::pair<Tensor, Tensor> exchange(const LatentPair &p1, const LatentPair &p2);

/// Rows [begin, begin+count) of both maps.
LatentPair slice(const LatentPair &p, std::size_t begin, std::size_t count);

class Encoder {
public:
  Encoder() = default;
  Encoder(const ArchConfig &arch, Rng &rng);

  /// x: N×1×S×S. The trunk is shared; two 1×1 heads split its output.
  LatentPair encode(const Tensor &x, Mode mode);
  void register_into(ParamGroup &group, const std::string &prefix);

private:
  ArchConfig arch_;
  std::vector<ConvBlock> blocks_;
  Tensor head_u_w_, head_u_b_, head_k_w_, head_k_b_;
};

class Decoder {
public:
  Decoder() = default;
  Decoder(const ArchConfig &arch, Rng &rng);

  /// h: N×D×h×w -> N×1×S×S, unbounded (clamp when exporting images).
  Tensor decode(const Tensor &h, Mode mode);
  void register_into(ParamGroup &group, const std::string &prefix);

private:
  ArchConfig arch_;
  std::vector<ConvBlock> blocks_;
  Tensor out_w_, out_b_;
};

struct DiscOutput {
  Tensor logits; // N×2
  std::vector<double> probabilities() const { return softmax_rows(logits); }
};

/// Siamese classifier over (lateral, medial-flipped) patch pairs. Both patches
/// run through one shared conv branch; after every block a global average
/// pool is taken, and all pooled vectors (lateral first, then medial) are
/// concatenated into a linear head with two logits.
class Discriminator {
public:
  Discriminator() = default;
  Discriminator(const ArchConfig &arch, Rng &rng);
  /// Generic constructor for classifiers with their own channel schedule.
  Discriminator(std::vector<std::size_t> channels, double slope, Rng &rng);

  /// pairs: N×2×p×p.
  DiscOutput discriminate(const Tensor &pairs, Mode mode);
  void register_into(ParamGroup &group, const std::string &prefix);

private:
  std::vector<ConvBlock> blocks_;
  Tensor head_w_, head_b_;
};

/// In-graph patch extraction: N×1×S×S images -> N×2×p×p (lateral, mirrored
/// medial), matching extract_patches() on plain images.
Tensor patch_pairs(const Tensor &images);

/// Encoder + decoder (generator group) and discriminator (its own group).
struct KeCaeModel {
  ArchConfig arch;
  Encoder encoder;
  Decoder decoder;
  Discriminator discriminator;
  ParamGroup generator_params{"generator"};
  ParamGroup discriminator_params{"discriminator"};

  KeCaeModel(const ArchConfig &arch, std::uint64_t seed);
  KeCaeModel(const KeCaeModel &) = delete;
  KeCaeModel &operator=(const KeCaeModel &) = delete;
};

} // namespace kecae
