#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "aavit/data.hpp"
#include "aavit/image.hpp"
#include "aavit/rng.hpp"

// Synthetic real/spoof corpus for desk-scale runs. Both classes share the
// same smooth low-frequency color field plus mild noise; the attack class
// additionally carries a zero-mean pixel-period grid artifact (the kind of
// high-frequency pattern screen replays and prints introduce). Mean color is
// therefore uninformative while high-frequency band energy separates the
// classes.

namespace aavit {

struct SynthSpec {
    std::size_t per_class_train = 64;
    std::size_t per_class_dev = 32;
    std::size_t per_class_test = 32;
    std::size_t image_size = 32;
    std::uint64_t seed = 1;
};

namespace detail {

inline Tensor<float> synth_image(SplitMix64& rng, std::size_t size, bool attack, int* pattern_out) {
    const double tau = 2.0 * std::numbers::pi;
    double amp[3], offs[3], phx[3], phy[3];
    int fx[3], fy[3];
    for (int c = 0; c < 3; ++c) {
        amp[c] = rng.uniform(0.08, 0.22);
        offs[c] = rng.uniform(0.38, 0.62);
        phx[c] = rng.uniform(0.0, tau);
        phy[c] = rng.uniform(0.0, tau);
        fx[c] = 1 + static_cast<int>(rng.next_index(2));
        fy[c] = 1 + static_cast<int>(rng.next_index(2));
    }
    // Artifact: pixel-period stripes or checkerboard, zero-mean on even sizes.
    const int pattern = static_cast<int>(rng.next_index(3));
    const double artifact_amp = attack ? rng.uniform(0.06, 0.12) : 0.0;
    if (pattern_out) *pattern_out = pattern;
    std::vector<float> px(size * size * 3);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            int sign = 0;
            switch (pattern) {
                case 0: sign = ((x + y) % 2 == 0) ? 1 : -1; break;  // checkerboard
                case 1: sign = (x % 2 == 0) ? 1 : -1; break;        // vertical stripes
                default: sign = (y % 2 == 0) ? 1 : -1; break;       // horizontal stripes
            }
            for (int c = 0; c < 3; ++c) {
                const double field =
                    offs[c] + amp[c] * std::sin(tau * fx[c] * static_cast<double>(x) / size + phx[c]) *
                                  std::sin(tau * fy[c] * static_cast<double>(y) / size + phy[c]);
                const double noise = rng.uniform(-0.02, 0.02);
                px[(y * size + x) * 3 + c] =
                    static_cast<float>(field + noise + artifact_amp * sign);
            }
        }
    }
    return Tensor<float>::from_data({size, size, 3}, std::move(px));
}

}  // namespace detail

/// Writes the corpus under out_dir (images/ plus manifest.csv) and returns
/// the manifest. Byte-identical for identical spec (one RNG stream consumed
/// in the fixed split-class-index generation order).
inline SampleManifest synth_corpus(const std::filesystem::path& out_dir, const SynthSpec& spec) {
    if (spec.image_size < 8) throw config_error("synth image_size must be at least 8");
    if (spec.image_size % 2 != 0) throw config_error("synth image_size must be even");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw data_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    SplitMix64 rng(spec.seed);
    SampleManifest m;
    m.root = out_dir;

    struct SplitPlan {
        Split split;
        std::size_t per_class;
    };
    const SplitPlan plans[3] = {{Split::train, spec.per_class_train},
                                {Split::dev, spec.per_class_dev},
                                {Split::test, spec.per_class_test}};
    for (const auto& plan : plans) {
        for (int cls = 0; cls < 2; ++cls) {
            const bool attack = cls == 1;
            for (std::size_t i = 0; i < plan.per_class; ++i) {
                int pattern = 0;
                Tensor<float> img = detail::synth_image(rng, spec.image_size, attack, &pattern);
                char name[64];
                std::snprintf(name, sizeof(name), "%s_%s_%03zu", to_string(plan.split).c_str(),
                              attack ? "attack" : "real", i);
                const std::string rel = std::string("images/") + name + ".ppm";
                save_ppm(out_dir / rel, img);
                static constexpr AttackType kByPattern[3] = {AttackType::print, AttackType::phone,
                                                             AttackType::table};
                // One frame per video: the video id is the sample stem.
                m.entries.push_back({rel, attack ? Label::attack : Label::real,
                                     attack ? kByPattern[pattern] : AttackType::none, plan.split,
                                     name});
            }
        }
    }
    m.validate();
    save_manifest(m, out_dir / "manifest.csv");
    return m;
}

inline SampleManifest synth_corpus(const std::filesystem::path& out_dir,
                                   std::size_t n_per_class_per_split, std::size_t image_size,
                                   std::uint64_t seed) {
    return synth_corpus(out_dir, SynthSpec{n_per_class_per_split, n_per_class_per_split,
                                           n_per_class_per_split, image_size, seed});
}

}  // namespace aavit
