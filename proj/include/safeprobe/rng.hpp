#pragma once

// Counter-based random numbers. A value is a pure function of
// (seed, stream, counter), so any draw can be reproduced without replaying
// the sequence before it.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace safeprobe {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over bytes; stable across platforms.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Named sub-seed, e.g. derive_seed(run_seed, "synth").
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
    return mix64(seed ^ mix64(fnv1a64(name)));
}

constexpr std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t counter) noexcept {
    const std::uint64_t key = mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
    return mix64(key + counter * 0xd1b54a32d192ed03ULL);
}

/// Sequential view over one (seed, stream) pair.
class CounterRng {
public:
    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : seed_(seed), stream_(stream) {}

    constexpr std::uint64_t next_u64() noexcept { return counter_bits(seed_, stream_, counter_++); }

    /// Uniform on [0, 1) with 53 bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer on [0, bound), bound > 0. Rejection keeps it unbiased.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller; consumes two counters per draw.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace safeprobe
