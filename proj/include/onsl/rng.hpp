#pragma once

#include <cstdint>
#include <span>

namespace onsl {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives an independent stream key from (seed, a, b). Used as
// (seed, sample index, step index) so every sample/step pair has its own
// stream and results do not depend on how samples are split across workers.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    std::uint64_t k = mix64(seed ^ 0x6A09E667F3BCC909ULL);
    k = mix64(k ^ (a * 0xD1B54A32D192ED03ULL));
    k = mix64(k ^ (b * 0x8CB92BA72F3D8DD7ULL));
    return k;
}

/// Counter-based generator: the i-th output is a pure function of (key, i).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
    CounterRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept
        : key_(stream_key(seed, a, b)) {}

    std::uint64_t next_u64() noexcept { return mix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

    // Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() noexcept;

    void fill_normal(std::span<double> out) noexcept {
        for (double& v : out) v = normal();
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace onsl
