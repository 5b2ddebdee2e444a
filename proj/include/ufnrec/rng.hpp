#pragma once

#include <cmath>
#include <cstdint>

namespace ufnrec {

// splitmix64 finalizer. All randomness in the project flows through this so
// that sequences are pinned by our code, not by a stdlib implementation.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive a child seed from a parent seed and a tag path, e.g.
// mix_seed(master, {3, epoch, user}).
inline uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t h = mix64(seed);
    for (uint64_t t : tags) h = mix64(h ^ t);
    return h;
}

// Small deterministic PRNG stream (splitmix64).
struct Rng {
    uint64_t state = 0x853c49e6748fea9bULL;

    explicit Rng(uint64_t seed = 0) : state(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

    uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive, unbiased via rejection.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % range);
    }

    // Standard normal via Box-Muller (no spare caching, two uniforms per draw).
    double normal() {
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Truncated normal: resample until within [-2, 2] sigma, then scale.
    double trunc_normal(double scale) {
        double z;
        do {
            z = normal();
        } while (z < -2.0 || z > 2.0);
        return z * scale;
    }

    double gumbel() {
        double u;
        do {
            u = uniform01();
        } while (u <= 0.0);
        return -std::log(-std::log(u));
    }
};

// Stateless counter-based uniform in [0,1), used for dropout masks so that
// masks are reproducible in backward passes and independent of thread order.
inline double hash_uniform01(uint64_t seed, uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    uint64_t h = mix64(seed);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    h = mix64(h ^ d);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace ufnrec
