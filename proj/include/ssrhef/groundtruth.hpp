#pragma once

// Supervision targets derived from head-point annotations: Gaussian density
// maps, the binary segmentation pyramid, and count-class labels.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssrhef/tensor.hpp"

namespace ssrhef::gt {

struct Point {
    double x = 0.0;  // column
    double y = 0.0;  // row
};

struct AnnotationSet {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<Point> points;
    // parallel to points when non-empty; true marks a hard (small, faint) head
    std::vector<bool> hard;

    // every point must satisfy 0 <= x < width, 0 <= y < height
    void validate() const;
};

struct DensityMap {
    Grid2D values;
    std::int64_t stride = 1;
};

// three binary grids at strides 2, 4, 8 relative to the image
struct SegPyramid {
    std::array<Grid2D, 3> levels;
};

struct ClassLabelSpec {
    std::int64_t k = 15;
    double c_max = 0.0;
    double thr = 1.0;
};

struct GroundTruthBundle {
    DensityMap density;    // stride 1
    DensityMap density8;   // stride 8, sum-pooled
    SegPyramid pyramid;
    std::int64_t class_label = 0;
    std::int64_t head_count = 0;
};

// Gaussian of std sigma truncated at radius ceil(4*sigma), each head
// renormalized so its clipped kernel sums to exactly 1
DensityMap encode_density(const AnnotationSet& ann, double sigma);

// 15x15 ones template centered on each rounded head position, clipped
Grid2D encode_segmentation(const AnnotationSet& ann);

// three successive 2x2 stride-2 max reductions of the binary base map
SegPyramid build_seg_pyramid(const Grid2D& s0);

// sum-pooling over factor x factor blocks, zero padded on the far edges;
// preserves the total mass exactly
DensityMap downsample_density(const DensityMap& d, std::int64_t factor);

// thr = max(counts) / k; an all-zero dataset degenerates to thr = 1
ClassLabelSpec compute_thr(const std::vector<double>& counts, std::int64_t k);

// half-open bins [i*thr, (i+1)*thr), clamped to class k-1 at the top
std::int64_t encode_class_label(double count, const ClassLabelSpec& spec);

GroundTruthBundle make_bundle(const AnnotationSet& ann, double sigma, const ClassLabelSpec& spec);

// one dataset element: a grayscale image in [0,1] with its annotations
struct SceneItem {
    std::string name;
    Tensor4 image;
    AnnotationSet ann;
};

}  // namespace ssrhef::gt
