#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace sfm {

/// Counter-based generator: the n-th output is a SplitMix64 finalizer applied
/// to key + n * golden-gamma. Independent streams come from derive(), which
/// hashes tags into a fresh key, so parallel tasks never share state.
///
/// Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : key_(mix(seed ^ kSeedSalt)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return mix(key_ + (counter_++) * kGamma); }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// A stream keyed by this stream's key and the given tags. Does not advance
  /// this generator.
  Rng derive(std::initializer_list<std::uint64_t> tags) const noexcept {
    std::uint64_t k = key_;
    for (auto t : tags) k = mix(k ^ mix(t + kGamma));
    return Rng(Key{k});
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit Rng(Key k) noexcept : key_(k.value) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x5f6d3c1e2b4a7980ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sfm
