#include "ssrhef/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ssrhef::losses {

HefResult hef_loss(const Tensor4& pred, const Tensor4& gt, const HefConfig& cfg) {
    if (!pred.same_dims(gt)) {
        throw ShapeError("hef_loss: pred " + pred.dims_str() + " vs gt " + gt.dims_str());
    }
    if (!all_finite(pred.v) || !all_finite(gt.v)) {
        throw NumericalError("hef_loss: non-finite input");
    }
    if (cfg.gamma < 0.0) {
        throw DataError("hef gamma must be >= 0, got " + std::to_string(cfg.gamma));
    }
    const std::int64_t total = pred.size();
    const double inv_area = 1.0 / static_cast<double>(total);
    const double g = cfg.gamma;

    HefResult res;
    res.grad = Tensor4(pred.n, pred.c, pred.h, pred.w);
    double acc = 0.0;
    for (std::int64_t i = 0; i < total; ++i) {
        const double p = pred.v[static_cast<std::size_t>(i)];
        const double r = p - gt.v[static_cast<std::size_t>(i)];
        const double s = sigmoid(p);
        const double one_ms = 1.0 - s;
        const double wpow = g == 0.0 ? 1.0 : std::pow(one_ms, g);
        acc += wpow * r * r;
        // d/dp [(1-s)^g r^2] = 2 (1-s)^g r - g (1-s)^(g-1) s (1-s) r^2;
        // the second term vanishes identically at gamma 0
        double grad = 2.0 * wpow * r;
        if (g > 0.0) {
            grad -= g * std::pow(one_ms, g - 1.0) * s * one_ms * r * r;
        }
        res.grad.v[static_cast<std::size_t>(i)] = grad * inv_area;
    }
    res.value = acc * inv_area;
    return res;
}

DiceResult dice_loss(const std::array<Tensor4, 3>& pred_probs,
                     const std::array<const Grid2D*, 3>& gt_levels) {
    DiceResult res;
    for (int m = 0; m < 3; ++m) {
        const Tensor4& a = pred_probs[static_cast<std::size_t>(m)];
        const Grid2D& b = *gt_levels[static_cast<std::size_t>(m)];
        if (a.n != 1 || a.c != 1 || a.h != b.h || a.w != b.w) {
            throw ShapeError("dice_loss level " + std::to_string(m) + ": pred " + a.dims_str() +
                             " vs gt (" + std::to_string(b.h) + "," + std::to_string(b.w) + ")");
        }
        double dot = 0.0, na = 0.0, nb = 0.0;
        const std::int64_t total = a.size();
        for (std::int64_t i = 0; i < total; ++i) {
            const double av = a.v[static_cast<std::size_t>(i)];
            const double bv = b.v[static_cast<std::size_t>(i)];
            dot += av * bv;
            na += av * av;
            nb += bv * bv;
        }
        const double num = 2.0 * dot + kDiceEps;
        const double den = na + nb + kDiceEps;
        res.per_level[static_cast<std::size_t>(m)] = 1.0 - num / den;
        res.value += res.per_level[static_cast<std::size_t>(m)];

        // quotient rule: d(1 - N/D)/da_i = (2 a_i N - 2 b_i D) / D^2
        Tensor4& grad = res.grads[static_cast<std::size_t>(m)];
        grad = Tensor4(1, 1, a.h, a.w);
        const double inv_d2 = 1.0 / (den * den);
        for (std::int64_t i = 0; i < total; ++i) {
            const double av = a.v[static_cast<std::size_t>(i)];
            const double bv = b.v[static_cast<std::size_t>(i)];
            grad.v[static_cast<std::size_t>(i)] = (2.0 * av * num - 2.0 * bv * den) * inv_d2;
        }
    }
    return res;
}

ClsResult cls_loss(const Vec& logits, std::int64_t label) {
    const std::int64_t k = static_cast<std::int64_t>(logits.size());
    if (k < 2) {
        throw ShapeError("cls_loss needs at least 2 classes, got " + std::to_string(k));
    }
    if (label < 0 || label >= k) {
        throw DataError("class label " + std::to_string(label) + " outside [0," +
                        std::to_string(k) + ")");
    }
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);

    double z = 0.0;
    for (double x : logits) z += std::exp(x - mx);
    const double log_z = std::log(z);

    ClsResult res;
    res.value = log_z - (logits[static_cast<std::size_t>(label)] - mx);
    res.grad.resize(logits.size());
    for (std::int64_t i = 0; i < k; ++i) {
        const double p = std::exp(logits[static_cast<std::size_t>(i)] - mx) / z;
        res.grad[static_cast<std::size_t>(i)] = p - (i == label ? 1.0 : 0.0);
    }
    return res;
}

LossBreakdown overall_loss(double hef, double segs, double cla, const LossWeights& w) {
    LossBreakdown b;
    b.hef = hef;
    b.segs = segs;
    b.cla = cla;
    b.overall = hef + w.lambda_seg * segs + w.lambda_cla * cla;
    return b;
}

}  // namespace ssrhef::losses
