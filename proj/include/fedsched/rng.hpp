#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace fedsched {

// Counter-based generator built on the splitmix64 mixing function.  Output k
// of a stream with key K is mix(K + (k+1) * GOLDEN), so a stream is a pure
// function of (key, counter) and two implementations can reproduce each other
// from the recorded key alone.  Substreams are derived by remixing the key
// with caller-chosen ids (user index, realization index, draw index), which
// keeps every user/realization pair on an independent stream.
class CounterRng {
public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Derived stream: deterministic in (key, a, b), independent for distinct ids.
  CounterRng stream(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t k = mix(key_ + 0x9e3779b97f4a7c15ULL * (a + 1));
    k = mix(k + 0xd1b54a32d192ed03ULL * (b + 1));
    return CounterRng(k);
  }

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix(key_ + counter_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).  n must be positive; modulo bias is < 2^-50
  // for the n used here (small graph/draw counts).
  int next_below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Standard normal pair via Box-Muller; consumes exactly two uniforms so the
  // draw count per call is fixed and replayable.
  void next_gaussian_pair(double& z0, double& z1) {
    double u1 = next_double();
    double u2 = next_double();
    // Guard against log(0); pushes u1 into (0, 1].
    u1 = 1.0 - u1;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    z0 = r * std::cos(t);
    z1 = r * std::sin(t);
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double z0, z1;
    next_gaussian_pair(z0, z1);
    spare_ = z1;
    have_spare_ = true;
    return z0;
  }

  std::uint64_t key() const { return key_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

} // namespace fedsched
