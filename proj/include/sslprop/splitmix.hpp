#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>

namespace sslprop {

/// SplitMix64 (Steele, Lea, Flood; reference constants from Vigna's
/// splitmix64.c). Every seeded procedure in the engine draws from this
/// stream so results are reproducible across platforms.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Value in [0, bound) by multiply-shift: (x * bound) >> 64.
  constexpr std::uint64_t bounded(std::uint64_t bound) noexcept {
    const unsigned __int128 product = static_cast<unsigned __int128>((*this)()) * bound;
    return static_cast<std::uint64_t>(product >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double unit() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  static constexpr std::uint64_t min() noexcept { return 0; }
  static constexpr std::uint64_t max() noexcept { return std::numeric_limits<std::uint64_t>::max(); }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// First output of a SplitMix64 stream seeded with `value`.
constexpr std::uint64_t splitmix_hash(std::uint64_t value) noexcept {
  return SplitMix64(value)();
}

/// Per-item seed: base XOR SplitMix64(ordinal). Independent of processing
/// order and worker count.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t ordinal) noexcept {
  return base ^ splitmix_hash(ordinal);
}

/// Fisher-Yates: for i = n-1 down to 1, swap(items[i], items[bounded(i+1)]).
template <class T>
void fisher_yates_shuffle(std::span<T> items, SplitMix64& rng) {
  if (items.size() < 2) return;
  for (std::size_t i = items.size() - 1; i >= 1; --i) {
    const auto j = static_cast<std::size_t>(rng.bounded(i + 1));
    using std::swap;
    swap(items[i], items[j]);
  }
}

/// Standard normal deviates by Box-Muller; both deviates of each pair are
/// used, cosine branch first.
class GaussianStream {
 public:
  explicit constexpr GaussianStream(std::uint64_t seed) noexcept : rng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = static_cast<double>((rng_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = rng_.unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sslprop
