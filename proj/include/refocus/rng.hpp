#pragma once

#include <cstdint>
#include <vector>

namespace refocus {

// Splittable counter-based generator. Every random draw in a run descends from
// the base seed through derive() calls, one per level of the hierarchy
// (base -> phase -> epoch -> task -> rollout); token draws then consume the
// stream sequentially. Derivation is pure, so any subtree can be replayed
// without running the rest of the run.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed ^ kPhi)) {}

  // Child stream for a labelled branch. Children with distinct indices are
  // statistically independent streams.
  Rng derive(uint64_t child_index) const {
    return Rng(mix(state_ + kPhi * (child_index + 1)));
  }

  uint64_t next_u64() {
    state_ += kPhi;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n);

  // Sample an index from unnormalized non-negative weights.
  size_t categorical(const std::vector<double>& weights);

  uint64_t state() const { return state_; }

 private:
  static constexpr uint64_t kPhi = 0x9e3779b97f4a7c15ull;  // 2^64 / golden ratio

  // splitmix64 finalizer
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

}  // namespace refocus
