#include "ssrhef/groundtruth.hpp"

#include <algorithm>
#include <cmath>

namespace ssrhef::gt {

void AnnotationSet::validate() const {
    if (height <= 0 || width <= 0) {
        throw DataError("annotation set has empty image dims " + std::to_string(height) + "x" +
                        std::to_string(width));
    }
    if (!hard.empty() && hard.size() != points.size()) {
        throw DataError("annotation tags count " + std::to_string(hard.size()) +
                        " does not match point count " + std::to_string(points.size()));
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 &&
              p.y < static_cast<double>(height))) {
            throw DataError("point " + std::to_string(i) + " at (" + std::to_string(p.x) + "," +
                            std::to_string(p.y) + ") outside image " + std::to_string(width) +
                            "x" + std::to_string(height));
        }
    }
}

DensityMap encode_density(const AnnotationSet& ann, double sigma) {
    ann.validate();
    if (!(sigma > 0.0)) {
        throw DataError("density sigma must be positive, got " + std::to_string(sigma));
    }
    const std::int64_t H = ann.height, W = ann.width;
    const double radius = std::ceil(4.0 * sigma);
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    DensityMap d;
    d.stride = 1;
    d.values = Grid2D(H, W);

    for (const Point& p : ann.points) {
        // square truncation window around the real-valued center; the window
        // translates exactly with integer shifts of the center
        const std::int64_t r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.y - radius)));
        const std::int64_t r1 = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(std::floor(p.y + radius)));
        const std::int64_t c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.x - radius)));
        const std::int64_t c1 = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(std::floor(p.x + radius)));

        double mass = 0.0;
        for (std::int64_t r = r0; r <= r1; ++r) {
            const double dy = static_cast<double>(r) - p.y;
            for (std::int64_t c = c0; c <= c1; ++c) {
                const double dx = static_cast<double>(c) - p.x;
                mass += std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
            }
        }
        // the nearest in-bounds pixel is always inside the window, so the
        // clipped kernel mass is positive for any valid point
        const double scale = 1.0 / mass;
        for (std::int64_t r = r0; r <= r1; ++r) {
            const double dy = static_cast<double>(r) - p.y;
            for (std::int64_t c = c0; c <= c1; ++c) {
                const double dx = static_cast<double>(c) - p.x;
                d.values.at(r, c) += scale * std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
            }
        }
    }
    return d;
}

Grid2D encode_segmentation(const AnnotationSet& ann) {
    ann.validate();
    Grid2D s(ann.height, ann.width);
    for (const Point& p : ann.points) {
        const std::int64_t cy = std::llround(p.y);
        const std::int64_t cx = std::llround(p.x);
        const std::int64_t r0 = std::max<std::int64_t>(0, cy - 7);
        const std::int64_t r1 = std::min<std::int64_t>(ann.height - 1, cy + 7);
        const std::int64_t c0 = std::max<std::int64_t>(0, cx - 7);
        const std::int64_t c1 = std::min<std::int64_t>(ann.width - 1, cx + 7);
        for (std::int64_t r = r0; r <= r1; ++r) {
            for (std::int64_t c = c0; c <= c1; ++c) {
                s.at(r, c) = 1.0;
            }
        }
    }
    return s;
}

namespace {

// one 2x2 stride-2 reduction: 1 iff any covered source pixel is positive;
// odd far edges behave as zero padding
Grid2D reduce_any(const Grid2D& src) {
    const std::int64_t oh = (src.h + 1) / 2, ow = (src.w + 1) / 2;
    Grid2D out(oh, ow);
    for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x = 0; x < ow; ++x) {
            double v = 0.0;
            for (std::int64_t dy = 0; dy < 2; ++dy) {
                for (std::int64_t dx = 0; dx < 2; ++dx) {
                    const std::int64_t sy = 2 * y + dy, sx = 2 * x + dx;
                    if (sy < src.h && sx < src.w && src.at(sy, sx) > 0.0) v = 1.0;
                }
            }
            out.at(y, x) = v;
        }
    }
    return out;
}

}  // namespace

SegPyramid build_seg_pyramid(const Grid2D& s0) {
    SegPyramid pyr;
    pyr.levels[0] = reduce_any(s0);
    pyr.levels[1] = reduce_any(pyr.levels[0]);
    pyr.levels[2] = reduce_any(pyr.levels[1]);
    return pyr;
}

DensityMap downsample_density(const DensityMap& d, std::int64_t factor) {
    if (factor <= 0) {
        throw DataError("downsample factor must be positive, got " + std::to_string(factor));
    }
    const std::int64_t oh = (d.values.h + factor - 1) / factor;
    const std::int64_t ow = (d.values.w + factor - 1) / factor;
    DensityMap out;
    out.stride = d.stride * factor;
    out.values = Grid2D(oh, ow);
    for (std::int64_t y = 0; y < d.values.h; ++y) {
        for (std::int64_t x = 0; x < d.values.w; ++x) {
            out.values.at(y / factor, x / factor) += d.values.at(y, x);
        }
    }
    return out;
}

ClassLabelSpec compute_thr(const std::vector<double>& counts, std::int64_t k) {
    if (counts.empty()) {
        throw DataError("compute_thr needs at least one count");
    }
    if (k < 1) {
        throw DataError("class count must be >= 1, got " + std::to_string(k));
    }
    ClassLabelSpec spec;
    spec.k = k;
    spec.c_max = *std::max_element(counts.begin(), counts.end());
    // an all-zero dataset would give a zero-width bin; fall back to width 1
    spec.thr = spec.c_max > 0.0 ? spec.c_max / static_cast<double>(k) : 1.0;
    return spec;
}

std::int64_t encode_class_label(double count, const ClassLabelSpec& spec) {
    if (count < 0.0) {
        throw DataError("head count must be non-negative, got " + std::to_string(count));
    }
    if (!(spec.thr > 0.0) || spec.k < 1) {
        throw DataError("invalid class label spec (thr " + std::to_string(spec.thr) + ", k " +
                        std::to_string(spec.k) + ")");
    }
    const std::int64_t bin = static_cast<std::int64_t>(std::floor(count / spec.thr));
    return std::min<std::int64_t>(bin, spec.k - 1);
}

GroundTruthBundle make_bundle(const AnnotationSet& ann, double sigma, const ClassLabelSpec& spec) {
    GroundTruthBundle b;
    b.density = encode_density(ann, sigma);
    b.density8 = downsample_density(b.density, 8);
    b.pyramid = build_seg_pyramid(encode_segmentation(ann));
    b.head_count = static_cast<std::int64_t>(ann.points.size());
    b.class_label = encode_class_label(static_cast<double>(b.head_count), spec);
    return b;
}

}  // namespace ssrhef::gt
