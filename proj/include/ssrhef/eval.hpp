#pragma once

// Counting metrics over a dataset: per-image predicted vs true counts, MAE,
// root-mean-squared count error, and localized easy/hard subset diagnostics.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssrhef/groundtruth.hpp"
#include "ssrhef/model.hpp"
#include "ssrhef/trainer.hpp"

namespace ssrhef::eval {

struct SubsetStats {
    std::int64_t heads = 0;
    double gt_local = 0.0;        // summed local ground-truth mass
    double est_local = 0.0;       // summed local predicted mass
    double mean_abs_err = 0.0;    // mean |gt - est| over the subset's heads
    double mean_under_est = 0.0;  // mean max(0, gt - est)
};

struct ImageScore {
    std::string name;
    double gt_count = 0.0;
    double est_count = 0.0;
};

struct EvalReport {
    std::vector<ImageScore> images;
    double mae = 0.0;
    double mse = 0.0;  // sqrt of the mean squared count error
    SubsetStats easy, hard;
};

// aggregate metrics from aligned count lists
std::pair<double, double> score_counts(const std::vector<double>& gt_counts,
                                       const std::vector<double>& est_counts);

// predict_density returns a stride-8 density map for the item's image; the
// injectable form lets tests score ground truth against itself
EvalReport evaluate_maps(const std::vector<gt::SceneItem>& items,
                         const std::function<Tensor4(const gt::SceneItem&)>& predict_density,
                         double sigma);

EvalReport evaluate(const model::ModelConfig& cfg, const model::ModelParams& params,
                    const std::vector<gt::SceneItem>& items, double sigma);

// side length of the per-head scoring window at input resolution
inline constexpr std::int64_t kLocalWindow = 11;

struct AblatePair {
    EvalReport focused;  // gamma = 2 arm
    EvalReport plain;    // gamma = 0 arm
};

// two seed-matched training runs differing only in gamma, each evaluated on
// the same dataset
AblatePair ablate(const std::vector<gt::SceneItem>& dataset, const model::ModelConfig& mcfg,
                  const trainer::TrainConfig& tcfg);

std::string report_to_json(const EvalReport& r);
std::string ablate_to_json(const AblatePair& p);

}  // namespace ssrhef::eval
