#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace storval {

/// Counter-based normal draws: every (seed, stream, counter) triple maps to one
/// fixed variate, independent of call order. Bit-reproducible across platforms
/// because it does not depend on std::normal_distribution.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0)
        : key_(mix(mix(seed ^ 0x243f6a8885a308d3ULL) ^ mix(stream + 0x13198a2e03707344ULL) ^
                   mix(substream * 0xa4093822299f31d0ULL + 1))) {}

    /// Uniform in (0, 1).
    double uniform(std::uint64_t counter, std::uint64_t lane = 0) const {
        const std::uint64_t bits = mix(key_ ^ mix(counter * 2 + lane + 0x082efa98ec4e6c89ULL));
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal (Box-Muller, cosine branch).
    double normal(std::uint64_t counter) const {
        const double u1 = uniform(counter, 0);
        const double u2 = uniform(counter, 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    // splitmix64 finaliser
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::uint64_t key_;
};

}  // namespace storval
