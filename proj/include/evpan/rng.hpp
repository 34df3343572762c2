#pragma once

// Deterministic counter-based random stream. Every draw is a pure function
// of (seed, stream, counter), so any consumer can be reproduced in another
// language from the recipe below:
//
//   mix64(z): z += 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//             z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//   (the SplitMix64 output function, all arithmetic mod 2^64)
//
//   draw k of StreamRng(seed, stream) = mix64(mix64(seed) ^ mix64(stream) + k*GOLDEN)
//   where GOLDEN = 0x9E3779B97F4A7C15 and mix64 is applied to the combined
//   state exactly as written in next_u64() below.
//
//   next_double = next_u64() >> 11, scaled by 2^-53  (uniform in [0, 1))
//   next_below(n) = high 64 bits of next_u64() * n   (bounded draw)

#include <cstdint>

#include "evpan/core.hpp"

namespace evpan {

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream)
      : base_(detail::mix64(seed) ^ detail::mix64(stream)), counter_(0) {}

  std::uint64_t next_u64() {
    const std::uint64_t v = detail::mix64(base_ + counter_ * detail::kGolden);
    ++counter_;
    return v;
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n). Uses the multiply-high reduction, whose bias of at
  // most n / 2^64 is irrelevant at the scales used here.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ValidationError("rng: next_below(0)");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t base_;
  std::uint64_t counter_;
};

// Stream ids used by the synthetic data generator.
inline constexpr std::uint64_t kSceneStream = 0;
inline constexpr std::uint64_t kNoiseStream = 1;

}  // namespace evpan
