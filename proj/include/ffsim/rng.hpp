#pragma once

#include <cstdint>

namespace ffsim {

/// Counter-based random stream.
///
/// Each draw is a pure function of (key, counter), so a stream's output never
/// depends on what other streams did or on thread scheduling. Streams are
/// derived from a master seed with `split`, e.g. one per environment index.
/// Uniform and normal variates are computed here rather than through
/// <random> distributions so sequences are identical across standard
/// libraries.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  /// Independent child stream keyed by (this key, index).
  Rng split(std::uint64_t index) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(index + 0x9e3779b97f4a7c15ULL));
    return child;
  }

  /// Stream for (seed, a, b) without constructing the intermediate streams.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(seed).split(a).split(b);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, both halves used).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  bool operator==(const Rng&) const = default;

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ffsim
