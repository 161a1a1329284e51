#pragma once

#include <cstdint>

namespace ivmsm {

double normal_quantile(double p);  // from numerics.cpp

// Counter-based splitmix64 stream. Substreams are derived by hashing the seed
// together with up to three indices (replication, subject, extra), so parallel
// replications draw from disjoint streams and any (seed, indices) combination
// is reproducible without coordination.
struct Rng {
    std::uint64_t state;

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    explicit Rng(std::uint64_t seed) : state(mix(seed + 0x9E3779B97F4A7C15ull)) {}

    static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                         std::uint64_t c = 0) {
        Rng r(seed);
        r.state = mix(r.state ^ (a + 0x9E3779B97F4A7C15ull));
        r.state = mix(r.state ^ (b + 0xD1B54A32D192ED03ull));
        r.state = mix(r.state ^ (c + 0x8CB92BA72F3D8DD7ull));
        return r;
    }

    std::uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ull;
        return mix(state);
    }

    // Strictly inside (0,1): 53-bit mantissa centered on half-steps, so the
    // inverse-CDF normal below never sees 0 or 1.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return normal_quantile(uniform()); }

    bool bernoulli(double p) { return uniform() < p; }

    // Bounded draw via 128-bit multiply-shift (deterministic, bias < n/2^64).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }
};

// Stable derivation of a child seed (e.g., one seed per replication).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return Rng::mix(Rng::mix(seed + 0x9E3779B97F4A7C15ull) ^
                    (index + 0xD1B54A32D192ED03ull));
}

}  // namespace ivmsm
