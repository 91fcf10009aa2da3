#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace gfn {

// SplitMix64 step, used only to derive stream seeds.
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Addressable random streams. A stream is identified by (master seed,
// purpose, index) and always reproduces the same draw sequence, so rollouts
// can run on any worker in any order and a resumed run re-derives the exact
// streams it would have used without persisting engine state.
enum class StreamPurpose : uint64_t {
  kParamInit = 1,
  kMemberSelect = 2,
  kAction = 3,
  kBootstrap = 4,
  kModeSet = 5,
  kTest = 6,
};

class RngStream {
 public:
  RngStream(uint64_t seed, StreamPurpose purpose, uint64_t index = 0)
      : eng_(splitmix64(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(purpose))) ^
                        splitmix64(index))) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  uint64_t uniform_below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);  // multiple of n
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Inverse-CDF draw over a fixed index order. Zero-probability entries are
  // never selected; top-end rounding falls back to the last positive entry so
  // the result is always in the support.
  int categorical(std::span<const double> probs) {
    const double u = uniform01();
    double cum = 0.0;
    int last_positive = -1;
    for (size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = static_cast<int>(i);
      cum += probs[i];
      if (u < cum) return last_positive;
    }
    if (last_positive < 0) throw std::invalid_argument("categorical: no positive mass");
    return last_positive;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gfn
