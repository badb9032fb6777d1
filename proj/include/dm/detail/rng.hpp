#pragma once

#include <cmath>
#include <cstdint>

namespace dm::detail {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Counter-based stream keyed by (seed, tube, ray). Every ray owns an
/// independent stream, so draws are reproducible for any parallel
/// schedule.
class RayRng {
  public:
    RayRng(uint64_t seed, uint64_t tube, uint64_t ray) {
        state_ = seed;
        (void)splitmix64(state_);
        state_ ^= 0x9e3779b97f4a7c15ull * (tube + 1);
        (void)splitmix64(state_);
        state_ ^= 0xc2b2ae3d27d4eb4full * (ray + 1);
        (void)splitmix64(state_);
    }

    /// Uniform draw in (0, 1].
    double u01() {
        uint64_t bits = splitmix64(state_);
        return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
    }

  private:
    uint64_t state_ = 0;
};

/// Knuth product method; only suitable for small means.
inline long poisson_small(RayRng& rng, double lambda) {
    double limit = std::exp(-lambda);
    long k = 0;
    double prod = rng.u01();
    while (prod > limit) {
        ++k;
        prod *= rng.u01();
    }
    return k;
}

/// Hormann's PTRS transformed-rejection sampler, valid for lambda >= 10.
inline long poisson_ptrs(RayRng& rng, double lambda) {
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
        double u = rng.u01() - 0.5;
        double v = rng.u01();
        double us = 0.5 - std::abs(u);
        long k = static_cast<long>(std::floor((2.0 * a / us + b) * u + lambda + 0.43));
        if (us >= 0.07 && v <= v_r) return k;
        if (k < 0 || (us < 0.013 && v > us)) continue;
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            k * loglam - lambda - std::lgamma(static_cast<double>(k) + 1.0))
            return k;
    }
}

inline long poisson_draw(RayRng& rng, double lambda) {
    if (!(lambda > 0.0)) return 0;
    return lambda < 10.0 ? poisson_small(rng, lambda) : poisson_ptrs(rng, lambda);
}

}  // namespace dm::detail
