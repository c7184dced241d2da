#ifndef RORRLAB_RNG_HPP
#define RORRLAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rorrlab {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Counter-based generator: draw i of stream (seed, stream) is
// mix64(key + i * golden), so any stream can be regenerated independently
// of how work was sharded. Only integer arithmetic and libm are used, so a
// given seed reproduces across platforms.
class CounterRng {
public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(seed ^ mix64(stream ^ 0xD1B54A32D192ED03ULL))) {}

  std::uint64_t next_u64() noexcept {
    return mix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  // Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t below(std::uint64_t bound) noexcept {
    // Lemire's multiply-shift; the residual bias is < bound / 2^64.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  // Box-Muller, one variate per call.
  double normal() noexcept {
    const double u = uniform();
    const double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
  }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rorrlab

#endif
