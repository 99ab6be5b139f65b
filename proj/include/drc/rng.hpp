#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace drc {

// SplitMix64 stream. Self-contained so that shuffles, draws, and initializers
// are bit-reproducible across compilers and standard libraries (std::
// distributions are not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % bound);
        std::uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % bound;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Integer uniform in [lo, hi] inclusive.
    long long uniform_int(long long lo, long long hi) {
        return lo + (long long)next_below(std::uint64_t(hi - lo + 1));
    }

    // Box-Muller, one value per call (the pair's second half is discarded so
    // draw order stays independent of call sites).
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Labeled seed fan-out: one global seed derives independent per-stage streams
// (compose/split/init/shuffle/augment). Changing how one stage consumes its
// stream never perturbs another stage's randomness.
inline std::uint64_t fan_out(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ull; // FNV-1a
    for (char c : label) {
        h ^= std::uint64_t(static_cast<unsigned char>(c));
        h *= 0x100000001B3ull;
    }
    Rng mix(seed ^ h);
    return mix.next_u64();
}

inline std::uint64_t fan_out(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    Rng mix(fan_out(seed, label) ^ (0x9E3779B97F4A7C15ull * (index + 1)));
    return mix.next_u64();
}

} // namespace drc
