#include "doacal/rng.hpp"

#include <cmath>

namespace doacal {

namespace {
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

double uniform01(Rng& rng) noexcept { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

CMat complex_normal(Rng& rng, Index rows, Index cols) {
  CMat out(rows, cols);
  // Box-Muller yields both parts of one entry from one pair.
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      double u1 = uniform01(rng);
      const double u2 = uniform01(rng);
      if (u1 <= 0.0) u1 = 0x1.0p-53;
      const double radius = std::sqrt(-std::log(u1));  // variance 1/2 per part
      out(r, c) = std::polar(radius, 2.0 * kPi * u2);
    }
  }
  return out;
}

CMat random_phase(Rng& rng, Index rows, Index cols, double amplitude) {
  CMat out(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) out(r, c) = std::polar(amplitude, 2.0 * kPi * uniform01(rng));
  return out;
}

}  // namespace doacal
