#pragma once

// Central-difference gradient verification. Every analytic backward pass in
// the library is validated through this interface before it is trusted.

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "ssrhef/tensor.hpp"

namespace ssrhef {

struct GradCheckReport {
    std::int64_t coords_checked = 0;
    double max_rel_err = 0.0;
    std::int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool ok(double tol) const { return max_rel_err <= tol; }
    std::string describe() const;
};

// fn evaluates a scalar loss at the given point; point is perturbed in place
// and restored. analytic must hold one gradient entry per point entry.
// max_coords == 0 checks every coordinate; otherwise a deterministic sample
// of max_coords distinct coordinates drawn from mt19937_64(sample_seed).
GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                                  std::span<double> point, std::span<const double> analytic,
                                  double epsilon = 1e-5, std::int64_t max_coords = 0,
                                  std::uint64_t sample_seed = 0);

// relative error between an analytic and a numeric derivative
double grad_rel_err(double analytic, double numeric);

}  // namespace ssrhef
