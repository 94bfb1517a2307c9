#include "ssrhef/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ssrhef::trainer {

namespace {

// stream salts keep initialization, cropping and augmentation draws apart
constexpr std::uint64_t kCropSalt = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kAugSalt = 0xd1b54a32d192ed03ull;

void mirror_grid(Grid2D& g) {
    for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t x = 0; x < g.w / 2; ++x) {
            std::swap(g.at(y, x), g.at(y, g.w - 1 - x));
        }
    }
}

void mirror_image(Tensor4& t) {
    for (std::int64_t y = 0; y < t.h; ++y) {
        for (std::int64_t x = 0; x < t.w / 2; ++x) {
            std::swap(t.at(0, 0, y, x), t.at(0, 0, y, t.w - 1 - x));
        }
    }
}

// deterministic bounded draw; std::shuffle is not pinned across library
// implementations, so the shuffle is hand-rolled
std::int64_t draw_below(std::mt19937_64& rng, std::int64_t n) {
    return static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
}

}  // namespace

AdamState make_adam_state(const model::ModelParams& params) {
    AdamState st;
    st.m = model::zeros_like(params);
    st.v = model::zeros_like(params);
    st.t = 0;
    return st;
}

std::vector<TrainSample> crop_patches(const Tensor4& image, const gt::AnnotationSet& ann,
                                      const gt::ClassLabelSpec& spec, double sigma,
                                      std::mt19937_64& rng) {
    if (image.n != 1 || image.c != 1) {
        throw ShapeError("crop_patches expects a (1,1,h,w) image, got " + image.dims_str());
    }
    if (image.h < 32 || image.w < 32) {
        throw DataError("image " + image.dims_str() + " too small to crop (need >= 32x32)");
    }
    const std::int64_t H = image.h, W = image.w;

    std::vector<TrainSample> out;
    out.reserve(14);
    for (int tier = 0; tier < 3; ++tier) {
        const std::int64_t ph = (H / kPatchSideDiv[tier]) / 8 * 8;
        const std::int64_t pw = (W / kPatchSideDiv[tier]) / 8 * 8;
        if (ph < 8 || pw < 8) {
            throw DataError("image " + image.dims_str() + " too small for patch tier " +
                            std::to_string(tier));
        }
        for (std::int64_t k = 0; k < kPatchCounts[tier]; ++k) {
            const std::int64_t oy = draw_below(rng, H - ph + 1);
            const std::int64_t ox = draw_below(rng, W - pw + 1);

            TrainSample s;
            s.image = Tensor4(1, 1, ph, pw);
            for (std::int64_t y = 0; y < ph; ++y) {
                const double* src = image.plane(0, 0) + (oy + y) * W + ox;
                std::copy(src, src + pw, s.image.plane(0, 0) + y * pw);
            }

            gt::AnnotationSet pann;
            pann.height = ph;
            pann.width = pw;
            for (std::size_t i = 0; i < ann.points.size(); ++i) {
                const gt::Point& p = ann.points[i];
                if (p.x >= static_cast<double>(ox) && p.x < static_cast<double>(ox + pw) &&
                    p.y >= static_cast<double>(oy) && p.y < static_cast<double>(oy + ph)) {
                    pann.points.push_back({p.x - static_cast<double>(ox),
                                           p.y - static_cast<double>(oy)});
                    if (!ann.hard.empty()) pann.hard.push_back(ann.hard[i]);
                }
            }
            s.bundle = gt::make_bundle(pann, sigma, spec);
            out.push_back(std::move(s));
        }
    }
    return out;
}

void augment_apply(TrainSample& sample, bool flip, bool noise, double noise_std,
                   std::mt19937_64& rng) {
    if (flip) {
        mirror_image(sample.image);
        mirror_grid(sample.bundle.density.values);
        mirror_grid(sample.bundle.density8.values);
        for (auto& level : sample.bundle.pyramid.levels) mirror_grid(level);
    }
    if (noise) {
        for (double& x : sample.image.v) {
            x = std::clamp(x + noise_std * gaussian(rng), 0.0, 1.0);
        }
    }
}

void augment(TrainSample& sample, const TrainConfig& cfg, std::mt19937_64& rng) {
    const bool flip = uniform01(rng) < cfg.flip_prob;
    const bool noise = uniform01(rng) < cfg.noise_prob;
    augment_apply(sample, flip, noise, cfg.noise_std, rng);
}

void adam_step(model::ModelParams& params, const model::ModelParams& grads, AdamState& state,
               const TrainConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
    for (const auto& name : params.names) {
        auto p = model::param_span(params.at(name));
        auto g = model::param_span(grads.at(name));
        auto m = model::param_span(state.m.at(name));
        auto v = model::param_span(state.v.at(name));
        if (g.size() != p.size()) {
            throw ShapeError("adam_step: gradient size mismatch for " + name);
        }
        if (!all_finite(g)) {
            throw NumericalError("non-finite gradient for parameter " + name);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
        }
    }
}

losses::LossBreakdown train_step(const model::ModelConfig& mcfg, model::ModelParams& params,
                                 AdamState& state, const TrainSample& sample,
                                 const TrainConfig& cfg) {
    model::ModelOutputs out = model::forward(mcfg, params, sample.image);

    const losses::HefResult hef =
        losses::hef_loss(out.density, to_tensor(sample.bundle.density8.values), {cfg.gamma});

    // Dice runs on post-sigmoid maps; the chain back to the logits applies
    // the sigmoid derivative here
    std::array<Tensor4, 3> probs;
    for (int m = 0; m < 3; ++m) {
        const Tensor4& logit = out.seg_logits[static_cast<std::size_t>(m)];
        probs[static_cast<std::size_t>(m)] = Tensor4(1, 1, logit.h, logit.w);
        for (std::size_t i = 0; i < logit.v.size(); ++i) {
            probs[static_cast<std::size_t>(m)].v[i] = sigmoid(logit.v[i]);
        }
    }
    const losses::DiceResult dice =
        losses::dice_loss(probs, {&sample.bundle.pyramid.levels[0],
                                  &sample.bundle.pyramid.levels[1],
                                  &sample.bundle.pyramid.levels[2]});

    const losses::ClsResult cls = losses::cls_loss(out.class_logits, sample.bundle.class_label);

    const losses::LossWeights weights{cfg.lambda_seg, cfg.lambda_cla};
    const losses::LossBreakdown breakdown =
        losses::overall_loss(hef.value, dice.value, cls.value, weights);
    if (!std::isfinite(breakdown.overall)) {
        throw NumericalError("training diverged: overall loss is not finite");
    }

    model::LossGrads lg;
    lg.d_density = hef.grad;
    for (int m = 0; m < 3; ++m) {
        const Tensor4& p = probs[static_cast<std::size_t>(m)];
        Tensor4 d(1, 1, p.h, p.w);
        for (std::size_t i = 0; i < p.v.size(); ++i) {
            d.v[i] = cfg.lambda_seg * dice.grads[static_cast<std::size_t>(m)].v[i] * p.v[i] *
                     (1.0 - p.v[i]);
        }
        lg.d_seg[static_cast<std::size_t>(m)] = std::move(d);
    }
    lg.d_class_logits.resize(cls.grad.size());
    for (std::size_t i = 0; i < cls.grad.size(); ++i) {
        lg.d_class_logits[i] = cfg.lambda_cla * cls.grad[i];
    }

    model::ModelParams grads = model::backward(mcfg, params, out, lg);
    if (cfg.clip > 0.0) {
        double sq = 0.0;
        for (const auto& name : grads.names) {
            for (double g : model::param_span(grads.at(name))) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip) {
            const double scale = cfg.clip / norm;
            for (const auto& name : grads.names) {
                for (double& g : model::param_span(grads.at(name))) g *= scale;
            }
        }
    }
    adam_step(params, grads, state, cfg);
    return breakdown;
}

TrainResult train(const std::vector<gt::SceneItem>& dataset, const model::ModelConfig& mcfg,
                  const TrainConfig& cfg, std::ostream* log_stream) {
    if (dataset.empty()) {
        throw DataError("training dataset is empty");
    }
    std::vector<double> counts;
    counts.reserve(dataset.size());
    for (const auto& item : dataset) {
        item.ann.validate();
        counts.push_back(static_cast<double>(item.ann.points.size()));
    }
    const gt::ClassLabelSpec spec = gt::compute_thr(counts, mcfg.num_classes);

    TrainResult res;
    res.params = model::build_model(mcfg, cfg.seed);
    AdamState state = make_adam_state(res.params);

    std::mt19937_64 crop_rng(cfg.seed ^ kCropSalt);
    std::mt19937_64 aug_rng(cfg.seed ^ kAugSalt);

    std::vector<TrainSample> pool;
    std::vector<std::size_t> order;
    std::size_t pos = 0;

    char line[192];
    for (std::int64_t iter = 1; iter <= cfg.iterations; ++iter) {
        if (pos == order.size()) {
            // fresh crop origins every epoch, then a seeded shuffle
            pool.clear();
            for (const auto& item : dataset) {
                auto patches = crop_patches(item.image, item.ann, spec, cfg.sigma, crop_rng);
                for (auto& s : patches) pool.push_back(std::move(s));
            }
            order.resize(pool.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i) {
                const auto j = static_cast<std::size_t>(
                    draw_below(crop_rng, static_cast<std::int64_t>(i)));
                std::swap(order[i - 1], order[j]);
            }
            pos = 0;
        }
        TrainSample sample = pool[order[pos++]];
        augment(sample, cfg, aug_rng);

        const losses::LossBreakdown b = train_step(mcfg, res.params, state, sample, cfg);
        res.log.push_back(b);
        if (log_stream != nullptr) {
            std::snprintf(line, sizeof line, "%lld, %.9f, %.9f, %.9f, %.9f\n",
                          static_cast<long long>(iter), b.hef, b.segs, b.cla, b.overall);
            (*log_stream) << line;
        }

        if (cfg.eval_every > 0 && iter % cfg.eval_every == 0) {
            double abs_err = 0.0;
            for (const auto& item : dataset) {
                const model::ModelOutputs out = model::forward(mcfg, res.params, item.image);
                abs_err += std::abs(model::predict_count(out.density) -
                                    static_cast<double>(item.ann.points.size()));
            }
            const double mae = abs_err / static_cast<double>(dataset.size());
            res.mae_log.emplace_back(iter, mae);
            if (log_stream != nullptr) {
                std::snprintf(line, sizeof line, "eval, %lld, %.6f\n",
                              static_cast<long long>(iter), mae);
                (*log_stream) << line;
            }
        }
    }
    return res;
}

}  // namespace ssrhef::trainer
