#include "ssrhef/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace ssrhef {

std::string GradCheckReport::describe() const {
    std::ostringstream os;
    os << "checked " << coords_checked << " coords, max_rel_err " << max_rel_err;
    if (worst_coord >= 0) {
        os << " at coord " << worst_coord << " (analytic " << worst_analytic << ", numeric "
           << worst_numeric << ")";
    }
    return os.str();
}

double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                                  std::span<double> point, std::span<const double> analytic,
                                  double epsilon, std::int64_t max_coords,
                                  std::uint64_t sample_seed) {
    if (point.size() != analytic.size()) {
        throw ShapeError("finite_diff_check: point has " + std::to_string(point.size()) +
                         " coords but analytic grad has " + std::to_string(analytic.size()));
    }
    const std::int64_t total = static_cast<std::int64_t>(point.size());

    std::vector<std::int64_t> coords;
    if (max_coords <= 0 || max_coords >= total) {
        coords.resize(static_cast<std::size_t>(total));
        std::iota(coords.begin(), coords.end(), std::int64_t{0});
    } else {
        // partial Fisher-Yates over an index array; prefix holds the sample
        std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
        std::iota(idx.begin(), idx.end(), std::int64_t{0});
        std::mt19937_64 rng(sample_seed);
        for (std::int64_t i = 0; i < max_coords; ++i) {
            const std::int64_t j =
                i + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(total - i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        coords.assign(idx.begin(), idx.begin() + max_coords);
    }

    GradCheckReport rep;
    for (const std::int64_t k : coords) {
        const std::size_t i = static_cast<std::size_t>(k);
        const double saved = point[i];
        point[i] = saved + epsilon;
        const double fp = fn(point);
        point[i] = saved - epsilon;
        const double fm = fn(point);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError("finite_diff_check: loss not finite near coord " +
                                 std::to_string(k));
        }
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double rel = grad_rel_err(analytic[i], numeric);
        ++rep.coords_checked;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_coord = k;
            rep.worst_analytic = analytic[i];
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

}  // namespace ssrhef
