#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace aavit {

/// Deterministic 64-bit generator (splitmix64). Every random decision in the
/// library flows through this so that runs are reproducible across platforms
/// and re-implementable from the constants below.
///
/// Step: state += 0x9E3779B97F4A7C15, then finalize with the 30/27/31
/// xor-shift-multiply mix.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform index in [0, n). Plain modulo; the bias is irrelevant at the
    /// corpus sizes involved and keeps the generator trivially portable.
    std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_real(); }

    /// Standard normal via Box-Muller (consumes two draws).
    double normal() {
        double u1 = next_real();
        while (u1 == 0.0) u1 = next_real();
        double u2 = next_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// In-place Fisher-Yates, iterating i = n-1 .. 1, j = next_index(i+1).
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

/// One splitmix64 finalization round; used to derive sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded permutation of 0..n-1 for one epoch: Fisher-Yates under a
/// SplitMix64 stream seeded with seed ^ ((epoch+1) * 0x9E3779B97F4A7C15).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                                  std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 rng(seed ^ ((static_cast<std::uint64_t>(epoch) + 1) * 0x9E3779B97F4A7C15ULL));
    rng.shuffle(order);
    return order;
}

/// Order-sensitive hash of a permutation (splitmix-style fold). Ablation runs
/// log this to prove they consumed identical batch orders.
inline std::uint64_t permutation_hash(const std::vector<std::size_t>& order) {
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (std::size_t v : order) h = mix_seed(h, static_cast<std::uint64_t>(v) + 1);
    return h;
}

}  // namespace aavit
