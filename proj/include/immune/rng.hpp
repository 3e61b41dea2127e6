#pragma once

#include <cstdint>
#include <span>

namespace immune {

/**
 * Deterministic random stream with platform-independent output.
 *
 * The core generator is SplitMix64; doubles are built from the top 53 bits,
 * so identical seeds produce identical draws on every platform and compiler.
 * (std::uniform_real_distribution is deliberately avoided: its output is
 * implementation-defined.)
 *
 * Streams form a tree. derive(i) hashes the creation seed together with the
 * index i into a child seed, so sub-streams are a pure function of
 * (root seed, derivation path) and never depend on how many draws other
 * streams consumed. Parallel or reordered rollouts therefore see exactly the
 * same randomness as a sequential run.
 */
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  // Creation seed of this stream (not the evolving state).
  uint64_t seed() const { return seed_; }

  // Next 64 uniform bits (SplitMix64 step).
  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in (0, 1]; safe to pass to log().
  double next_double_open() { return 1.0 - next_double(); }

  // Independent child stream for index `i`, derived from the creation seed.
  Rng derive(uint64_t i) const {
    // One extra SplitMix64 scramble of (seed, i) decorrelates siblings.
    uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (i + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  /**
   * Sample an index from an (unnormalized is fine) probability vector by
   * inverse-CDF walk in index order. Deterministic for a given stream state;
   * never returns an index with zero weight.
   */
  int categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double u = next_double() * total;
    double cum = 0.0;
    int last_positive = -1;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = i;
      cum += probs[i];
      if (u < cum) return i;
    }
    return last_positive;  // guards against cum < total from rounding
  }

 private:
  uint64_t seed_;
  uint64_t state_;
};

// Fixed derivation tags so independent consumers of a master seed never
// collide (decode step draws, MC rollouts, ASR query/sample streams, ...).
namespace stream_tag {
constexpr uint64_t kStep = 0x01;
constexpr uint64_t kQmc = 0x02;
constexpr uint64_t kAsrQuery = 0x03;
constexpr uint64_t kGen = 0x04;
constexpr uint64_t kAsrDraw = 0x05;
}  // namespace stream_tag

}  // namespace immune
