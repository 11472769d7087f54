#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sdkv {

// splitmix64: used to derive independent stream seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt));
}

// Deterministic RNG wrapper. std::mt19937_64 output is fully specified by the
// standard; the float helpers below avoid std::uniform_*_distribution, whose
// draw sequences are implementation-defined, so results are identical across
// compilers and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1); never returns exactly 0 (safe for log()).
    double uniform_open01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Uniform integer in [0, n). Rejection-free multiply-shift would bias for
    // huge n; plain modulo keeps the draw count fixed, and n here is tiny.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (one value per draw pair).
    double normal() {
        double u1 = uniform_open01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double gumbel() { return -std::log(-std::log(uniform_open01())); }

private:
    std::mt19937_64 engine_;
};

}  // namespace sdkv
