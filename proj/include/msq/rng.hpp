#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace msq {

// Deterministic SplitMix64 stream. All randomness in the project flows
// through this type so that runs are byte-reproducible: the generator is
// pure 64-bit integer arithmetic, identical on every platform.
//
// split(label) derives an independent child stream from the parent's
// *original* seed and the label, so the child does not depend on how much
// of the parent stream has been consumed.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; used where log(0) must be impossible.
    double uniform_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Two uniforms per draw, no cached
    // spare, so the stream state alone captures the generator.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Deterministic child stream keyed by (original seed, label).
    SeededRng split(std::string_view label) const {
        uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001B3ULL;
        }
        return SeededRng(mix(seed_ ^ mix(h)));
    }

    uint64_t seed() const { return seed_; }
    uint64_t state() const { return state_; }
    void restore(uint64_t seed, uint64_t state) {
        seed_ = seed;
        state_ = state;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t state_;
};

}  // namespace msq
