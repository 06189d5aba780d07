#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace cascade_iv {

// Seed derivation
// ---------------
// All stochastic components derive their per-item seeds from a master seed with
// the splitmix64 finalizer:
//
//   mix(z)       = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//                  z ^= z >> 27; z *= 0x94D049BB133111EB;
//                  z ^= z >> 31
//   derive(s, i) = mix(s + 0x9E3779B97F4A7C15 * (i + 1))        (mod 2^64)
//
// Everything is unsigned 64-bit arithmetic, so the streams are identical on
// every platform.

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept
{
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept
{
    return splitmix64(master + 0x9E3779B97F4A7C15ULL * (index + 1));
}

/// Thin wrapper over mt19937_64. The engine is fully specified by the standard;
/// the distributions below are written out so draws do not depend on the
/// standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open()
    {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller; the second variate is cached.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double logistic()
    {
        const double u = uniform_open();
        return std::log(u / (1.0 - u));
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace cascade_iv
