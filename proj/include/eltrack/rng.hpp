#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "linalg.hpp"

namespace eltrack {

/// Deterministic RNG wrapper. std::mt19937_64 output is pinned by the
/// standard, and the value mappings below avoid the unspecified behaviour of
/// std::uniform_real_distribution, so streams are reproducible across
/// platforms and library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        const double u = (gen_() >> 11) * 0x1.0p-53;  // [0, 1) with 53 bits
        return lo + (hi - lo) * u;
    }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        // Lemire-style rejection-free enough for our purposes: plain modulo
        // bias is below 2^-40 for the small n used here, but reject anyway.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do { v = gen_(); } while (v >= limit);
        return v % n;
    }

    /// Uniform point on the unit sphere in R^d (Box-Muller + normalize).
    Vec unit_vector(std::size_t d) {
        Vec v(d);
        for (std::size_t i = 0; i < d; i += 2) {
            const double u1 = uniform(1e-300, 1.0);
            const double u2 = uniform(0.0, 1.0);
            const double r = std::sqrt(-2.0 * std::log(u1));
            v[i] = r * std::cos(2.0 * M_PI * u2);
            if (i + 1 < d) v[i + 1] = r * std::sin(2.0 * M_PI * u2);
        }
        const double n = norm(v);
        if (n == 0.0) { v[0] = 1.0; return v; }
        return (1.0 / n) * v;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace eltrack
