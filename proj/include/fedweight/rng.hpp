#pragma once

#include <array>
#include <cstdint>

namespace fedweight {

/// One step of the SplitMix64 sequence; also used as a 64-bit mixing hash.
std::uint64_t splitmix64(std::uint64_t& state);

/// Child seed for stream `stream` of `master`. Used for per-subject,
/// per-round and per-noise-cell seeds so each consumer owns its own stream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// xoshiro256** 1.0, seeded through SplitMix64.
///
/// The generator is fully specified by its algorithm, so a given seed yields
/// the same stream on every platform. Gaussian draws use Box-Muller and always
/// consume exactly two 64-bit outputs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::array<std::uint64_t, 4> s_;
};

}  // namespace fedweight
