// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_RNG_HPP
#define DIFFSPLAT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace diffsplat {

// Named, seeded streams so that concurrency and consumer order never change
// sampled values: each purpose gets its own generator derived from
// (seed, stream id) via splitmix64.
enum class Stream : std::uint64_t {
    Init = 1,
    Mask = 2,
    Batch = 3,
    Pose = 4,
    Data = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
  public:
    Rng() : gen_(0) {}
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}
    Rng(std::uint64_t seed, Stream stream)
        : gen_(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream))) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits; stable across platforms.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller; always consumes exactly two uniforms.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

  private:
    std::mt19937_64 gen_;
};

} // namespace diffsplat

#endif // DIFFSPLAT_RNG_HPP
