#pragma once

#include <cmath>
#include <cstdint>

namespace tgv {

// Deterministic 64-bit generator (splitmix64, Steele et al. constants).
// Integer-only state transitions, so the same seed yields the same
// sequence on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    float next_float() { return float(next_double()); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Modulo bias is negligible for the small ranges used here.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; consumes two draws per call.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Gumbel(0,1) noise: -log(-log(u)) with u strictly inside (0,1).
    double gumbel() {
        double u = (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        return -std::log(-std::log(u));
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

} // namespace tgv
