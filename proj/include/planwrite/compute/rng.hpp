#pragma once

// Deterministic random source. Gaussian draws use Box-Muller on raw
// mt19937_64 output instead of std::normal_distribution, so sequences are
// reproducible across standard library implementations.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>

namespace planwrite::compute {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // in [2^-65, 1); never exactly 0 so log() below is safe
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gaussian_vector(Eigen::Index n) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(gaussian());
    return v;
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Stable seed derivation for per-input / per-sample streams (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

}  // namespace planwrite::compute
