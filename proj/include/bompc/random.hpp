#pragma once

// Portable seeded randomness. std::mt19937_64 is bit-specified by the
// standard; the <random> distributions are not, so the conversions to
// doubles live here.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace bompc {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t next_u64() { return engine_(); }

  /// Standard normal via Box-Muller (no cached second value, so the stream
  /// position depends only on the number of calls).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

inline constexpr std::array<unsigned, 24> kPrimes = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37,
                                                     41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};

inline double radical_inverse(std::uint64_t index, unsigned base) {
  double inv_base = 1.0 / base;
  double factor = inv_base;
  double result = 0.0;
  while (index > 0) {
    result += static_cast<double>(index % base) * factor;
    index /= base;
    factor *= inv_base;
  }
  return result;
}

}  // namespace detail

/// Randomly shifted Halton sequence on the unit cube [0,1)^dim.
///
/// The shift (Cranley-Patterson rotation) is drawn from `seed`, so different
/// seeds give different but equally well-spread point sets. Points are
/// returned row-major: point i occupies [i*dim, (i+1)*dim).
inline std::vector<double> shifted_halton(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (dim == 0 || dim > detail::kPrimes.size()) {
    throw std::invalid_argument("shifted_halton: dimension must be in [1, 24]");
  }
  Rng rng(seed);
  std::vector<double> shift(dim);
  for (auto& s : shift) s = rng.uniform();
  std::vector<double> out(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      // Skip index 0 (the origin for every base).
      double v = detail::radical_inverse(i + 1, detail::kPrimes[d]) + shift[d];
      out[i * dim + d] = v - std::floor(v);
    }
  }
  return out;
}

}  // namespace bompc
