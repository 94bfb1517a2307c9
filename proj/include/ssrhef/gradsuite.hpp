#pragma once

// The gradient verification suite: every op backward and every loss gradient
// against central finite differences over multiple seeds, plus a per-parameter
// pass over a width-reduced full model.

#include <cstdint>
#include <string>
#include <vector>

namespace ssrhef::gradsuite {

struct SuiteResult {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t coords = 0;
    bool pass = false;
};

inline constexpr double kTolerance = 1e-4;
inline constexpr int kSeeds = 10;

// full_model additionally runs the reduced-model per-parameter check
std::vector<SuiteResult> run_grad_suite(bool full_model);

bool all_pass(const std::vector<SuiteResult>& results);

}  // namespace ssrhef::gradsuite
