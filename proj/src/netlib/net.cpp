#include "kecae/net.hpp"

#include "kecae/data.hpp"
#include "kecae/errors.hpp"

namespace kecae {

ArchConfig ArchConfig::desk() { return ArchConfig{}; }

ArchConfig ArchConfig::paper() {
  ArchConfig a;
  a.preset = "paper";
  a.input_side = 256;
  a.block_channels = {32, 64, 128, 256, 512, 1024, 2048};
  a.latent_depth = 2048;
  a.disc_channels = {32, 64, 128, 256};
  return a;
}

ArchConfig ArchConfig::from_preset(const std::string &name) {
  if (name == "desk")
    return desk();
  if (name == "paper")
    return paper();
  throw UsageError("unknown preset '" + name + "' (expected paper|desk)");
}

void ArchConfig::validate() const {
  if (block_channels.empty())
    throw UsageError("arch: block_channels must not be empty");
  if (block_channels.size() >= 63 || input_side == 0 ||
      input_side % (std::size_t{1} << block_channels.size()) != 0)
    throw UsageError("arch: input_side " + std::to_string(input_side) +
                     " is not divisible by 2^" + std::to_string(block_channels.size()));
  if (latent_depth == 0)
    throw UsageError("arch: latent_depth must be positive");
  if (enc_kernel != 3 || dec_kernel != 4)
    throw UsageError("arch: encoder kernel 3 and decoder kernel 4 are required for mirrored "
                     "halving/doubling");
  if (disc_channels.empty())
    throw UsageError("arch: disc_channels must not be empty");
}

std::size_t ArchConfig::latent_side() const { return input_side >> block_channels.size(); }

std::size_t ArchConfig::patch_side() const { return kecae::patch_side(input_side); }

// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t pad, bool transposed, double slope, Rng &rng)
    : bn_(out), stride_(stride), pad_(pad), transposed_(transposed), slope_(slope) {
  if (transposed) {
    // Each output pixel of a stride-s transposed conv sees in * (k/s)^2 taps.
    const std::size_t fan_in = std::max<std::size_t>(1, in * kernel * kernel / (stride * stride));
    weight_ = kaiming_init({in, out, kernel, kernel}, fan_in, rng);
  } else {
    weight_ = kaiming_init({out, in, kernel, kernel}, in * kernel * kernel, rng);
  }
  bias_ = Tensor::zeros({out}, true);
  gamma_ = Tensor::full({out}, 1.0, true);
  beta_ = Tensor::zeros({out}, true);
}

Tensor ConvBlock::forward(const Tensor &x, Mode mode) {
  const Tensor z = transposed_ ? deconv2d(x, weight_, bias_, stride_, pad_)
                               : conv2d(x, weight_, bias_, stride_, pad_);
  return leaky_relu(batchnorm2d(z, gamma_, beta_, bn_, mode), slope_);
}

void ConvBlock::register_into(ParamGroup &group, const std::string &prefix) {
  group.add_param(prefix + ".weight", weight_);
  group.add_param(prefix + ".bias", bias_);
  group.add_param(prefix + ".bn.gamma", gamma_);
  group.add_param(prefix + ".bn.beta", beta_);
  group.add_buffer(prefix + ".bn.running_mean", bn_.running_mean);
  group.add_buffer(prefix + ".bn.running_var", bn_.running_var);
}

// ---------------------------------------------------------------------------

Tensor fuse(const LatentPair &p) {
  if (p.hU.shape() != p.hK.shape())
    throw ShapeError("fuse: hU " + shape_str(p.hU.shape()) + " and hK " +
                     shape_str(p.hK.shape()) + " differ");
  return add(p.hU, p.hK);
}

std::pair<Tensor, Tensor> exchange(const LatentPair &p1, const LatentPair &p2) {
  const Shape &s = p1.hU.shape();
  if (p1.hK.shape() != s || p2.hU.shape() != s || p2.hK.shape() != s)
    throw ShapeError("exchange: latent maps must share one shape, got " + shape_str(s) + ", " +
                     shape_str(p1.hK.shape()) + ", " + shape_str(p2.hU.shape()) + ", " +
                     shape_str(p2.hK.shape()));
  return {add(p1.hU, p2.hK), add(p2.hU, p1.hK)};
}

LatentPair slice(const LatentPair &p, std::size_t begin, std::size_t count) {
  return {narrow(p.hU, 0, begin, count), narrow(p.hK, 0, begin, count)};
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const ArchConfig &arch, Rng &rng) : arch_(arch) {
  arch.validate();
  std::size_t in = 1;
  for (std::size_t c : arch.block_channels) {
    blocks_.emplace_back(in, c, arch.enc_kernel, 2, 1, false, arch.leaky_slope, rng);
    in = c;
  }
  const std::size_t d = arch.latent_depth;
  head_u_w_ = kaiming_init({d, in, 1, 1}, in, rng);
  head_u_b_ = Tensor::zeros({d}, true);
  head_k_w_ = kaiming_init({d, in, 1, 1}, in, rng);
  head_k_b_ = Tensor::zeros({d}, true);
}

LatentPair Encoder::encode(const Tensor &x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != arch_.input_side ||
      x.dim(3) != arch_.input_side)
    throw ShapeError("encode: expected N×1×" + std::to_string(arch_.input_side) + "×" +
                     std::to_string(arch_.input_side) + ", got " + shape_str(x.shape()));
  Tensor h = x;
  for (auto &b : blocks_)
    h = b.forward(h, mode);
  return {conv2d(h, head_u_w_, head_u_b_, 1, 0), conv2d(h, head_k_w_, head_k_b_, 1, 0)};
}

void Encoder::register_into(ParamGroup &group, const std::string &prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].register_into(group, prefix + ".block" + std::to_string(i));
  group.add_param(prefix + ".head_u.weight", head_u_w_);
  group.add_param(prefix + ".head_u.bias", head_u_b_);
  group.add_param(prefix + ".head_k.weight", head_k_w_);
  group.add_param(prefix + ".head_k.bias", head_k_b_);
}

Decoder::Decoder(const ArchConfig &arch, Rng &rng) : arch_(arch) {
  arch.validate();
  // Mirror of the encoder: D -> c[L-2] -> ... -> c[0] -> 1, one doubling each.
  const auto &c = arch.block_channels;
  std::size_t in = arch.latent_depth;
  for (std::size_t i = c.size() - 1; i-- > 0;) {
    blocks_.emplace_back(in, c[i], arch.dec_kernel, 2, 1, true, arch.leaky_slope, rng);
    in = c[i];
  }
  out_w_ = kaiming_init({in, 1, arch.dec_kernel, arch.dec_kernel},
                        std::max<std::size_t>(1, in * arch.dec_kernel * arch.dec_kernel / 4), rng);
  out_b_ = Tensor::zeros({1}, true);
}

Tensor Decoder::decode(const Tensor &h, Mode mode) {
  const std::size_t ls = arch_.latent_side();
  if (h.rank() != 4 || h.dim(1) != arch_.latent_depth || h.dim(2) != ls || h.dim(3) != ls)
    throw ShapeError("decode: expected N×" + std::to_string(arch_.latent_depth) + "×" +
                     std::to_string(ls) + "×" + std::to_string(ls) + ", got " +
                     shape_str(h.shape()));
  Tensor y = h;
  for (auto &b : blocks_)
    y = b.forward(y, mode);
  return deconv2d(y, out_w_, out_b_, 2, 1);
}

void Decoder::register_into(ParamGroup &group, const std::string &prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].register_into(group, prefix + ".block" + std::to_string(i));
  group.add_param(prefix + ".out.weight", out_w_);
  group.add_param(prefix + ".out.bias", out_b_);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const ArchConfig &arch, Rng &rng)
    : Discriminator(arch.disc_channels, arch.leaky_slope, rng) {}

Discriminator::Discriminator(std::vector<std::size_t> channels, double slope, Rng &rng) {
  std::size_t in = 1, pooled = 0;
  for (std::size_t c : channels) {
    blocks_.emplace_back(in, c, 3, 2, 1, false, slope, rng);
    in = c;
    pooled += c;
  }
  head_w_ = kaiming_init({2, 2 * pooled}, 2 * pooled, rng);
  head_b_ = Tensor::zeros({2}, true);
}

DiscOutput Discriminator::discriminate(const Tensor &pairs, Mode mode) {
  if (pairs.rank() != 4 || pairs.dim(1) != 2 || pairs.dim(2) != pairs.dim(3))
    throw ShapeError("discriminate: expected N×2×p×p patch pairs, got " +
                     shape_str(pairs.shape()));
  const std::size_t n = pairs.dim(0);
  Tensor z = concat({narrow(pairs, 1, 0, 1), narrow(pairs, 1, 1, 1)}, 0);
  std::vector<Tensor> lateral, medial;
  for (auto &b : blocks_) {
    z = b.forward(z, mode);
    const Tensor g = global_avg_pool(z);
    lateral.push_back(narrow(g, 0, 0, n));
    medial.push_back(narrow(g, 0, n, n));
  }
  std::vector<Tensor> features = lateral;
  features.insert(features.end(), medial.begin(), medial.end());
  return {linear(concat(features, 1), head_w_, head_b_)};
}

void Discriminator::register_into(ParamGroup &group, const std::string &prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].register_into(group, prefix + ".block" + std::to_string(i));
  group.add_param(prefix + ".head.weight", head_w_);
  group.add_param(prefix + ".head.bias", head_b_);
}

Tensor patch_pairs(const Tensor &images) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != images.dim(3))
    throw ShapeError("patch_pairs: expected N×1×S×S, got " + shape_str(images.shape()));
  const std::size_t s = images.dim(2);
  const std::size_t p = patch_side(s);
  const std::size_t top = (s - p) / 2;
  return concat({crop2d(images, top, 0, p, p, false), crop2d(images, top, s - p, p, p, true)}, 1);
}

// ---------------------------------------------------------------------------

KeCaeModel::KeCaeModel(const ArchConfig &a, std::uint64_t seed) : arch(a) {
  arch.validate();
  Rng rng(seed);
  encoder = Encoder(arch, rng);
  decoder = Decoder(arch, rng);
  discriminator = Discriminator(arch, rng);
  encoder.register_into(generator_params, "encoder");
  decoder.register_into(generator_params, "decoder");
  discriminator.register_into(discriminator_params, "discriminator");
}

} // namespace kecae
