#pragma once

// Synthetic crowd scenes: smooth textured background plus two head
// populations, large high-contrast blobs (easy) and small faint blobs
// (hard), with per-head tags and minimum-separation placement.

#include <cstdint>

#include "ssrhef/groundtruth.hpp"

namespace ssrhef::synth {

struct SynthConfig {
    std::int64_t image_size = 64;
    std::int64_t n_easy = 8;
    std::int64_t n_hard = 7;
    double bg_amplitude = 0.08;  // background texture swing, <= 0.15 keeps pixels in [0,1]
    std::uint64_t seed = 0;
};

inline constexpr double kEasyRadius = 6.0;
inline constexpr double kEasyPeak = 0.5;
inline constexpr double kHardRadius = 2.0;
inline constexpr double kHardPeak = 0.12;
inline constexpr double kMinSeparation = 8.0;

// deterministic from the seed; throws DataError after 1000 placement
// rejections (too many heads for the canvas)
gt::SceneItem synth_scene(const SynthConfig& cfg);

}  // namespace ssrhef::synth
