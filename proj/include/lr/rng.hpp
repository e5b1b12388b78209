#pragma once

#include <cstdint>
#include <cstddef>
#include <string_view>

namespace lr {

// FNV-1a over raw bytes. Used for sub-seed derivation and artifact
// fingerprints in run records.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

// SplitMix64. Small, seedable, and identical on every platform; all
// randomness in the library flows through this generator.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53 significant bits, exact double arithmetic.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Approximate standard normal as a sum of 12 uniforms. Uses only
    // additions, so the result is bit-stable across platforms, unlike
    // std::normal_distribution.
    double next_normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += next_uniform();
        return s - 6.0;
    }

    float next_normal_f() { return static_cast<float>(next_normal()); }

    // Uniform in [-scale, scale].
    double next_symmetric(double scale) {
        return (2.0 * next_uniform() - 1.0) * scale;
    }

private:
    std::uint64_t state_;
};

// Named sub-seed: every component (noise, toy weights, stubs) draws from
// its own stream so one can be varied without disturbing the others.
inline std::uint64_t sub_seed(std::uint64_t master, std::string_view name) {
    SplitMix64 g(master ^ fnv1a64(name));
    return g.next_u64();
}

}  // namespace lr
