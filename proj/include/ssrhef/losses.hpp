#pragma once

// Training losses: hard-example-focusing regression, multi-scale Dice for
// segmentation, softmax cross-entropy for count classes, and their weighted
// combination. Each returns the scalar together with analytic gradients.

#include <array>
#include <cstdint>

#include "ssrhef/tensor.hpp"

namespace ssrhef::losses {

struct HefConfig {
    double gamma = 2.0;  // gamma == 0 reduces the loss to plain MSE
};

struct LossWeights {
    double lambda_seg = 1e-2;
    double lambda_cla = 1e-3;
};

struct LossBreakdown {
    double hef = 0.0;
    double segs = 0.0;
    double cla = 0.0;
    double overall = 0.0;
};

struct HefResult {
    double value = 0.0;
    Tensor4 grad;  // d value / d pred
};

// L = (1/(H*W)) * sum (1 - sigmoid(pred))^gamma * (pred - gt)^2, gradient
// taken through the modulating factor as well
HefResult hef_loss(const Tensor4& pred, const Tensor4& gt, const HefConfig& cfg);

struct DiceResult {
    double value = 0.0;                  // sum over the three levels
    std::array<double, 3> per_level{};   // 1 - (2*sum(a*b)+eps)/(sum(a^2)+sum(b^2)+eps)
    std::array<Tensor4, 3> grads;        // d value / d pred_probs[m]
};

inline constexpr double kDiceEps = 1e-6;

DiceResult dice_loss(const std::array<Tensor4, 3>& pred_probs,
                     const std::array<const Grid2D*, 3>& gt_levels);

struct ClsResult {
    double value = 0.0;
    Vec grad;  // softmax(logits) - one_hot(label)
};

// softmax cross-entropy with max-logit shift
ClsResult cls_loss(const Vec& logits, std::int64_t label);

// overall = hef + lambda_seg * segs + lambda_cla * cla; upstream gradient
// scales are 1, lambda_seg, lambda_cla in that order
LossBreakdown overall_loss(double hef, double segs, double cla, const LossWeights& w);

}  // namespace ssrhef::losses
