#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace collapse_lab {

/// SplitMix64 finalizer. Bijective 64-bit mixing function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based 64-bit generator ("splitmix64-ctr").
///
/// Output k of stream s under seed is mix64(key(seed, s) + (k + 1) * golden),
/// so any draw can be recomputed from (seed, stream, counter) alone. Streams
/// give independent sequences to parallel workers, probes, partitions, etc.
/// Every derived distribution below is written out by hand (no <random>
/// distributions) so results are identical across standard libraries.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(seed ^ mix64(stream + kGolden))) {}

  std::uint64_t next() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  std::uint64_t counter() const noexcept { return counter_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1].
  double uniform_open_low() noexcept {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  /// Unbiased integer in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  /// +1 or -1 with equal probability.
  double rademacher() noexcept { return (next() >> 63) ? 1.0 : -1.0; }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Partial Fisher-Yates: moves a uniform k-subset of `items` to the front.
  template <typename T>
  void partial_shuffle(std::span<T> items, std::size_t k) noexcept {
    const std::size_t n = items.size();
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(items[i], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    partial_shuffle(items, items.size());
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives a child seed from a parent seed and a list of integer tags.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(seed + CounterRng::kGolden);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace collapse_lab
