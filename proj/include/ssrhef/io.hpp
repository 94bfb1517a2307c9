#pragma once

// File formats: DMAP density containers, binary PGM images, annotation JSON,
// and dataset directory loading. All binary layouts are little-endian and
// round-trip bit-exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "ssrhef/groundtruth.hpp"

namespace ssrhef::io {

struct DmapData {
    Grid2D grid;
    std::uint32_t stride = 1;
};

// magic "DMAP0001", then height, width, stride as 32-bit little-endian,
// then row-major 64-bit little-endian values
void dmap_write(const std::string& path, const Grid2D& grid, std::uint32_t stride);
DmapData dmap_read(const std::string& path);

// binary PGM (P5), maxval 255; values are fractions of the [0,1] range
void pgm_write(const std::string& path, const Grid2D& unit_values);
Grid2D pgm_read(const std::string& path);

// min-max normalized 8-bit visualization; a constant map renders all black
void export_density_image(const Grid2D& density, const std::string& path);

// {"width": int, "height": int, "points": [[x, y], ...], "tags": [...]?}
// where tags, when present, holds "easy" or "hard" per point
gt::AnnotationSet ann_load(const std::string& path);
void ann_save(const std::string& path, const gt::AnnotationSet& ann);

// pairs stem.json with stem.pgm, sorted by stem
std::vector<gt::SceneItem> load_dataset(const std::string& dir);

}  // namespace ssrhef::io
