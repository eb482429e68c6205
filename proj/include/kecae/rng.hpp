#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace kecae {

/// splitmix64 step. Used to expand a single 64-bit seed into generator state
/// and to derive independent stream keys from (seed, counter) tuples.
std::uint64_t splitmix64(std::uint64_t &state);

/// Mix several words into one stream seed, e.g. derive_seed(seed, epoch, step).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// xoshiro256++ generator seeded through splitmix64.
///
/// All distributions below are implemented here rather than taken from
/// <random>, whose distribution algorithms are implementation-defined; the
/// same seed yields the same stream with any compiler and standard library.
class Rng {
public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; the spare value is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  State state() const { return s_; }
  void set_state(const State &s) {
    s_ = s;
    has_spare_ = false;
  }

  std::string serialize() const;
  static Rng deserialize(const std::string &text);

private:
  State s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace kecae
