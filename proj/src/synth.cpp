#include "ssrhef/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace ssrhef::synth {

namespace {

constexpr double kBgBase = 0.35;
constexpr int kMaxRejections = 1000;

void render_blob(Tensor4& img, const gt::Point& p, double radius, double peak) {
    const std::int64_t H = img.h, W = img.w;
    const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.y - radius)));
    const std::int64_t r1 = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(std::floor(p.y + radius)));
    const std::int64_t c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.x - radius)));
    const std::int64_t c1 = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(std::floor(p.x + radius)));
    for (std::int64_t r = r0; r <= r1; ++r) {
        for (std::int64_t c = c0; c <= c1; ++c) {
            const double dy = static_cast<double>(r) - p.y;
            const double dx = static_cast<double>(c) - p.x;
            const double dist = std::sqrt(dx * dx + dy * dy);
            if (dist <= radius) {
                // cosine falloff: peak at the center, zero at the rim
                img.at(0, 0, r, c) += peak * 0.5 * (1.0 + std::cos(M_PI * dist / radius));
            }
        }
    }
}

}  // namespace

gt::SceneItem synth_scene(const SynthConfig& cfg) {
    if (cfg.image_size < 16) {
        throw DataError("synthetic image size must be >= 16, got " +
                        std::to_string(cfg.image_size));
    }
    if (cfg.n_easy < 0 || cfg.n_hard < 0) {
        throw DataError("head counts must be non-negative");
    }
    if (cfg.bg_amplitude < 0.0 || kBgBase - cfg.bg_amplitude < 0.0 ||
        kBgBase + cfg.bg_amplitude + kEasyPeak > 1.0) {
        throw DataError("background amplitude " + std::to_string(cfg.bg_amplitude) +
                        " pushes pixels outside [0,1]");
    }
    const std::int64_t S = cfg.image_size;
    std::mt19937_64 rng(cfg.seed);

    gt::SceneItem item;
    char name[32];
    std::snprintf(name, sizeof name, "scene_%llu", static_cast<unsigned long long>(cfg.seed));
    item.name = name;
    item.ann.height = S;
    item.ann.width = S;
    item.image = Tensor4(1, 1, S, S);

    // smooth low-frequency background texture
    const double fx = uniform_in(rng, 0.5 / static_cast<double>(S), 1.5 / static_cast<double>(S));
    const double fy = uniform_in(rng, 0.5 / static_cast<double>(S), 1.5 / static_cast<double>(S));
    const double ph1 = uniform_in(rng, 0.0, 2.0 * M_PI);
    const double ph2 = uniform_in(rng, 0.0, 2.0 * M_PI);
    for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
            item.image.at(0, 0, y, x) =
                kBgBase + cfg.bg_amplitude *
                              std::sin(2.0 * M_PI * fx * static_cast<double>(x) + ph1) *
                              std::sin(2.0 * M_PI * fy * static_cast<double>(y) + ph2);
        }
    }

    // easy heads first, then hard; rejection keeps all pairs >= 8 px apart
    int rejections = 0;
    const double margin = 2.0;
    auto place = [&](std::int64_t count, bool hard_tag) {
        for (std::int64_t k = 0; k < count; ++k) {
            for (;;) {
                gt::Point p{uniform_in(rng, margin, static_cast<double>(S) - margin),
                            uniform_in(rng, margin, static_cast<double>(S) - margin)};
                bool ok = true;
                for (const gt::Point& q : item.ann.points) {
                    const double dx = p.x - q.x, dy = p.y - q.y;
                    if (dx * dx + dy * dy < kMinSeparation * kMinSeparation) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    item.ann.points.push_back(p);
                    item.ann.hard.push_back(hard_tag);
                    break;
                }
                if (++rejections > kMaxRejections) {
                    throw DataError("could not place " + std::to_string(count) +
                                    " heads with 8 px separation on a " + std::to_string(S) +
                                    "px canvas; try fewer heads");
                }
            }
        }
    };
    place(cfg.n_easy, false);
    place(cfg.n_hard, true);

    for (std::size_t i = 0; i < item.ann.points.size(); ++i) {
        const bool hard = item.ann.hard[i];
        render_blob(item.image, item.ann.points[i], hard ? kHardRadius : kEasyRadius,
                    hard ? kHardPeak : kEasyPeak);
    }
    for (double& v : item.image.v) v = std::clamp(v, 0.0, 1.0);
    return item;
}

}  // namespace ssrhef::synth
