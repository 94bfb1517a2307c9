#include "ssrhef/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "ssrhef/detail/endian.hpp"

namespace ssrhef::io {

namespace {

constexpr char kDmapMagic[8] = {'D', 'M', 'A', 'P', '0', '0', '0', '1'};

using detail::get_f64;
using detail::get_u32;
using detail::put_f64;
using detail::put_u32;

// skips PGM whitespace and '#' comment lines
int next_header_token(std::istream& is, const std::string& path) {
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF) {
        throw DataError("truncated PGM header in " + path);
    }
    return ch;
}

std::int64_t read_header_int(std::istream& is, const std::string& path) {
    int ch = next_header_token(is, path);
    if (!std::isdigit(ch)) {
        throw DataError("malformed PGM header in " + path);
    }
    std::int64_t v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = is.get();
    }
    return v;
}

}  // namespace

void dmap_write(const std::string& path, const Grid2D& grid, std::uint32_t stride) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("cannot open for writing: " + path);
    }
    os.write(kDmapMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(grid.h));
    put_u32(os, static_cast<std::uint32_t>(grid.w));
    put_u32(os, stride);
    for (double x : grid.v) put_f64(os, x);
    if (!os) {
        throw DataError("write failure on " + path);
    }
}

DmapData dmap_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open: " + path);
    }
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kDmapMagic, 8) != 0) {
        throw DataError("bad DMAP magic in " + path);
    }
    const std::uint32_t h = get_u32(is, "height");
    const std::uint32_t w = get_u32(is, "width");
    DmapData d;
    d.stride = get_u32(is, "stride");
    d.grid = Grid2D(h, w);
    for (double& x : d.grid.v) x = get_f64(is, path);
    // trailing bytes violate the fixed-length layout
    is.peek();
    if (!is.eof()) {
        throw DataError("trailing bytes after DMAP payload in " + path);
    }
    return d;
}

void pgm_write(const std::string& path, const Grid2D& unit_values) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("cannot open for writing: " + path);
    }
    os << "P5\n" << unit_values.w << " " << unit_values.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(unit_values.w));
    for (std::int64_t y = 0; y < unit_values.h; ++y) {
        for (std::int64_t x = 0; x < unit_values.w; ++x) {
            const double v = std::clamp(unit_values.at(y, x), 0.0, 1.0);
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) {
        throw DataError("write failure on " + path);
    }
}

Grid2D pgm_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open: " + path);
    }
    char p, five;
    if (!is.get(p) || !is.get(five) || p != 'P' || five != '5') {
        throw DataError(path + " is not a binary PGM (P5) file");
    }
    const std::int64_t w = read_header_int(is, path);
    const std::int64_t h = read_header_int(is, path);
    const std::int64_t maxval = read_header_int(is, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
        throw DataError("unsupported PGM geometry in " + path);
    }
    // read_header_int consumed the single whitespace byte after maxval
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w * h));
    if (!is.read(reinterpret_cast<char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()))) {
        throw DataError("truncated pixel data in " + path);
    }
    Grid2D g(h, w);
    const double scale = 1.0 / static_cast<double>(maxval);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        g.v[i] = static_cast<double>(bytes[i]) * scale;
    }
    return g;
}

void export_density_image(const Grid2D& density, const std::string& path) {
    double mn = 0.0, mx = 0.0;
    if (density.size() > 0) {
        mn = *std::min_element(density.v.begin(), density.v.end());
        mx = *std::max_element(density.v.begin(), density.v.end());
    }
    Grid2D out(density.h, density.w);
    if (mx > mn) {
        const double scale = 1.0 / (mx - mn);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            out.v[i] = (density.v[i] - mn) * scale;
        }
    }
    // a constant map (including all-zero) renders all black
    pgm_write(path, out);
}

gt::AnnotationSet ann_load(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot open: " + path);
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    gt::AnnotationSet ann;
    try {
        ann.width = j.at("width").get<std::int64_t>();
        ann.height = j.at("height").get<std::int64_t>();
        for (const auto& p : j.at("points")) {
            if (!p.is_array() || p.size() != 2) {
                throw DataError("each point must be [x, y] in " + path);
            }
            ann.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        if (j.contains("tags")) {
            for (const auto& t : j.at("tags")) {
                const std::string s = t.get<std::string>();
                if (s != "easy" && s != "hard") {
                    throw DataError("unknown tag '" + s + "' in " + path);
                }
                ann.hard.push_back(s == "hard");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad annotation schema in " + path + ": " + e.what());
    }
    ann.validate();
    return ann;
}

void ann_save(const std::string& path, const gt::AnnotationSet& ann) {
    ann.validate();
    nlohmann::json j;
    j["width"] = ann.width;
    j["height"] = ann.height;
    j["points"] = nlohmann::json::array();
    for (const auto& p : ann.points) {
        j["points"].push_back({p.x, p.y});
    }
    if (!ann.hard.empty()) {
        j["tags"] = nlohmann::json::array();
        for (bool h : ann.hard) j["tags"].push_back(h ? "hard" : "easy");
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw DataError("cannot open for writing: " + path);
    }
    os << j.dump(2) << "\n";
    if (!os) {
        throw DataError("write failure on " + path);
    }
}

std::vector<gt::SceneItem> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw DataError("not a directory: " + dir);
    }
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") {
            stems.push_back(entry.path().stem().string());
        }
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) {
        throw DataError("no annotation files (*.json) in " + dir);
    }

    std::vector<gt::SceneItem> items;
    items.reserve(stems.size());
    for (const auto& stem : stems) {
        const fs::path base = fs::path(dir) / stem;
        gt::SceneItem item;
        item.name = stem;
        item.ann = ann_load(base.string() + ".json");
        const Grid2D img = pgm_read(base.string() + ".pgm");
        if (img.h != item.ann.height || img.w != item.ann.width) {
            throw DataError("image dims " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                            " disagree with annotation dims for " + stem);
        }
        item.image = to_tensor(img);
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace ssrhef::io
