#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssrhef {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CacheMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense rank-4 array (batch, channels, height, width), row-major with width
/// fastest. The universal carrier for images, feature maps and density maps.
struct Tensor4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_) {
        if (n < 0 || c < 0 || h < 0 || w < 0) {
            throw ShapeError("Tensor4 dims must be non-negative, got " + dims_str());
        }
        v.assign(static_cast<std::size_t>(n * c * h * w), fill);
    }

    std::int64_t size() const { return n * c * h * w; }
    std::array<std::int64_t, 4> dims() const { return {n, c, h, w}; }
    bool same_dims(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) const {
        return ((i * c + j) * h + y) * w + x;
    }
    double& at(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) {
        return v[static_cast<std::size_t>(index(i, j, y, x))];
    }
    double at(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>(index(i, j, y, x))];
    }
    double* plane(std::int64_t i, std::int64_t j) { return v.data() + (i * c + j) * h * w; }
    const double* plane(std::int64_t i, std::int64_t j) const { return v.data() + (i * c + j) * h * w; }

    std::string dims_str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

/// Plain 2-d grid, used for density maps and segmentation masks.
struct Grid2D {
    std::int64_t h = 0, w = 0;
    std::vector<double> v;

    Grid2D() = default;
    Grid2D(std::int64_t h_, std::int64_t w_, double fill = 0.0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_ * w_), fill) {}

    std::int64_t size() const { return h * w; }
    double& at(std::int64_t y, std::int64_t x) { return v[static_cast<std::size_t>(y * w + x)]; }
    double at(std::int64_t y, std::int64_t x) const { return v[static_cast<std::size_t>(y * w + x)]; }

    double sum() const {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
};

/// Row-major matrix for dense-layer weights.
struct Mat {
    std::int64_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c, double fill = 0.0)
        : rows(r), cols(c), a(static_cast<std::size_t>(r * c), fill) {}

    double& at(std::int64_t r, std::int64_t c) { return a[static_cast<std::size_t>(r * cols + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return a[static_cast<std::size_t>(r * cols + c)]; }
};

using Vec = std::vector<double>;

inline Tensor4 to_tensor(const Grid2D& g) {
    Tensor4 t(1, 1, g.h, g.w);
    t.v = g.v;
    return t;
}

inline Grid2D to_grid(const Tensor4& t) {
    if (t.n != 1 || t.c != 1) {
        throw ShapeError("to_grid expects a (1,1,h,w) tensor, got " + t.dims_str());
    }
    Grid2D g(t.h, t.w);
    g.v = t.v;
    return g;
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// Deterministic scalar draws on top of mt19937_64. The engine's bit stream is
// pinned by the standard, so these produce identical values everywhere.
inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

/// Standard normal via Box-Muller (two engine draws per value, no caching).
inline double gaussian(std::mt19937_64& g) {
    double u1 = static_cast<double>((g() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline void fill_uniform(Tensor4& t, std::mt19937_64& g, double lo = 0.0, double hi = 1.0) {
    for (double& x : t.v) x = uniform_in(g, lo, hi);
}

inline void fill_gaussian(Tensor4& t, std::mt19937_64& g, double scale = 1.0) {
    for (double& x : t.v) x = scale * gaussian(g);
}

/// Numerically stable logistic sigmoid.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace ssrhef
