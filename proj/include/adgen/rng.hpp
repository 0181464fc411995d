#pragma once

#include <cmath>
#include <cstdint>

namespace adgen {

// Counter-based splittable RNG. The value sequence is a pure function of
// (seed, stream_id, counter) built from integer mixing only, so it is
// identical across runs and platforms. Distinct stream_ids give independent
// streams; fork() derives a child stream deterministically.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), counter_(0) {
    base_ = mix(mix(seed_ + 0x9E3779B97F4A7C15ull) ^ stream_id_);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(base_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Consumes two draws per call; no cached
  // spare, so the stream state stays fully described by the counter.
  double normal() {
    const double u = 1.0 - next_double();
    const double v = next_double();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u)) * std::cos(two_pi * v);
  }

  // Child stream keyed off the current state; advances this stream once.
  RngStream fork() { return RngStream(seed_, next_u64()); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
  std::uint64_t base_;
};

}  // namespace adgen
