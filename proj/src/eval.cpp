#include "ssrhef/eval.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace ssrhef::eval {

std::pair<double, double> score_counts(const std::vector<double>& gt_counts,
                                       const std::vector<double>& est_counts) {
    if (gt_counts.empty() || gt_counts.size() != est_counts.size()) {
        throw DataError("score_counts needs equal-length non-empty count lists");
    }
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < gt_counts.size(); ++i) {
        const double r = gt_counts[i] - est_counts[i];
        abs_sum += std::abs(r);
        sq_sum += r * r;
    }
    const double n = static_cast<double>(gt_counts.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

namespace {

struct SubsetAccum {
    std::int64_t heads = 0;
    double gt_local = 0.0, est_local = 0.0, abs_err = 0.0, under = 0.0;

    SubsetStats finalize() const {
        SubsetStats s;
        s.heads = heads;
        s.gt_local = gt_local;
        s.est_local = est_local;
        if (heads > 0) {
            s.mean_abs_err = abs_err / static_cast<double>(heads);
            s.mean_under_est = under / static_cast<double>(heads);
        }
        return s;
    }
};

// mass of the stride-8 cells covered by the head's 11x11 input-space window
double local_mass(const Grid2D& density8, std::int64_t cy, std::int64_t cx, std::int64_t h,
                  std::int64_t w) {
    const std::int64_t half = kLocalWindow / 2;
    const std::int64_t r0 = std::max<std::int64_t>(0, cy - half) / 8;
    const std::int64_t r1 = std::min<std::int64_t>(h - 1, cy + half) / 8;
    const std::int64_t c0 = std::max<std::int64_t>(0, cx - half) / 8;
    const std::int64_t c1 = std::min<std::int64_t>(w - 1, cx + half) / 8;
    double m = 0.0;
    for (std::int64_t r = r0; r <= r1 && r < density8.h; ++r) {
        for (std::int64_t c = c0; c <= c1 && c < density8.w; ++c) {
            m += density8.at(r, c);
        }
    }
    return m;
}

}  // namespace

EvalReport evaluate_maps(const std::vector<gt::SceneItem>& items,
                         const std::function<Tensor4(const gt::SceneItem&)>& predict_density,
                         double sigma) {
    if (items.empty()) {
        throw DataError("evaluation dataset is empty");
    }
    EvalReport rep;
    SubsetAccum easy, hard;
    std::vector<double> gt_counts, est_counts;
    for (const auto& item : items) {
        item.ann.validate();
        const Tensor4 pred = predict_density(item);
        if (pred.n != 1 || pred.c != 1 || pred.h != item.ann.height / 8 ||
            pred.w != item.ann.width / 8) {
            throw ShapeError("predicted density " + pred.dims_str() +
                             " is not the stride-8 map of a " + std::to_string(item.ann.width) +
                             "x" + std::to_string(item.ann.height) + " image");
        }
        const double gt_count = static_cast<double>(item.ann.points.size());
        const double est_count = model::predict_count(pred);
        rep.images.push_back({item.name, gt_count, est_count});
        gt_counts.push_back(gt_count);
        est_counts.push_back(est_count);

        if (!item.ann.hard.empty()) {
            const gt::DensityMap d8 =
                gt::downsample_density(gt::encode_density(item.ann, sigma), 8);
            const Grid2D pred_grid = to_grid(pred);
            for (std::size_t i = 0; i < item.ann.points.size(); ++i) {
                const auto& p = item.ann.points[i];
                const std::int64_t cy =
                    std::clamp<std::int64_t>(std::llround(p.y), 0, item.ann.height - 1);
                const std::int64_t cx =
                    std::clamp<std::int64_t>(std::llround(p.x), 0, item.ann.width - 1);
                const double g =
                    local_mass(d8.values, cy, cx, item.ann.height, item.ann.width);
                const double e = local_mass(pred_grid, cy, cx, item.ann.height, item.ann.width);
                SubsetAccum& acc = item.ann.hard[i] ? hard : easy;
                acc.heads += 1;
                acc.gt_local += g;
                acc.est_local += e;
                acc.abs_err += std::abs(g - e);
                acc.under += std::max(0.0, g - e);
            }
        }
    }
    const auto [mae, mse] = score_counts(gt_counts, est_counts);
    rep.mae = mae;
    rep.mse = mse;
    rep.easy = easy.finalize();
    rep.hard = hard.finalize();
    return rep;
}

EvalReport evaluate(const model::ModelConfig& cfg, const model::ModelParams& params,
                    const std::vector<gt::SceneItem>& items, double sigma) {
    return evaluate_maps(
        items,
        [&](const gt::SceneItem& item) {
            return model::forward(cfg, params, item.image).density;
        },
        sigma);
}

AblatePair ablate(const std::vector<gt::SceneItem>& dataset, const model::ModelConfig& mcfg,
                  const trainer::TrainConfig& tcfg) {
    trainer::TrainConfig focused_cfg = tcfg;
    focused_cfg.gamma = 2.0;
    trainer::TrainConfig plain_cfg = tcfg;
    plain_cfg.gamma = 0.0;

    AblatePair pair;
    const trainer::TrainResult focused = trainer::train(dataset, mcfg, focused_cfg, nullptr);
    pair.focused = evaluate(mcfg, focused.params, dataset, tcfg.sigma);
    const trainer::TrainResult plain = trainer::train(dataset, mcfg, plain_cfg, nullptr);
    pair.plain = evaluate(mcfg, plain.params, dataset, tcfg.sigma);
    return pair;
}

namespace {

nlohmann::json subset_json(const SubsetStats& s) {
    return {{"heads", s.heads},
            {"gt_local", s.gt_local},
            {"est_local", s.est_local},
            {"mean_abs_err", s.mean_abs_err},
            {"mean_under_est", s.mean_under_est}};
}

nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json j;
    j["mae"] = r.mae;
    j["mse"] = r.mse;
    j["images"] = nlohmann::json::array();
    for (const auto& im : r.images) {
        j["images"].push_back(
            {{"name", im.name}, {"gt_count", im.gt_count}, {"est_count", im.est_count}});
    }
    j["easy"] = subset_json(r.easy);
    j["hard"] = subset_json(r.hard);
    return j;
}

}  // namespace

std::string report_to_json(const EvalReport& r) { return report_json(r).dump(2); }

std::string ablate_to_json(const AblatePair& p) {
    nlohmann::json j;
    j["focused"] = report_json(p.focused);
    j["focused"]["gamma"] = 2.0;
    j["plain"] = report_json(p.plain);
    j["plain"]["gamma"] = 0.0;
    return j.dump(2);
}

}  // namespace ssrhef::eval
