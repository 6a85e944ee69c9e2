#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace npsde {

// SplitMix64 finalizer. Used to derive independent substream seeds from a
// master seed and a tuple of stream indices.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t substream_seed(std::uint64_t master, std::uint64_t a,
                                       std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ splitmix64(a + 0x1234567ULL));
  h = splitmix64(h ^ splitmix64(b + 0x89abcdefULL));
  h = splitmix64(h ^ splitmix64(c + 0x2545f491ULL));
  return h;
}

/// Portable Gaussian generator on top of std::mt19937_64.
///
/// std::normal_distribution is implementation-defined, so draws would differ
/// between standard libraries. This uses the Box-Muller transform on 53-bit
/// uniforms so that a seed yields the same stream everywhere.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // (0, 1], never zero so the log below is finite
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace npsde
