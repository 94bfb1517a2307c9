#pragma once

// Optimization loop: multi-scale patch pools regenerated per epoch, flip and
// noise augmentation, Adam updates of the combined loss, per-iteration
// logging, periodic train MAE.

#include <cstdint>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include "ssrhef/groundtruth.hpp"
#include "ssrhef/losses.hpp"
#include "ssrhef/model.hpp"

namespace ssrhef::trainer {

struct TrainConfig {
    double lr = 3e-5;
    std::int64_t batch_size = 1;
    double gamma = 2.0;
    double lambda_seg = 1e-2;
    double lambda_cla = 1e-3;
    double flip_prob = 0.5;
    double noise_prob = 0.5;
    double noise_std = 0.01;  // fraction of the [0,1] dynamic range
    std::int64_t iterations = 2000;
    std::uint64_t seed = 0;
    double sigma = 4.0;  // density kernel std
    std::int64_t eval_every = 100;
    double clip = 0.0;  // max global gradient L2 norm, 0 disables clipping
};

// per-image patch plan: 9 quarter-side patches, 4 half-side, 1 full
inline constexpr std::int64_t kPatchCounts[3] = {9, 4, 1};
inline constexpr std::int64_t kPatchSideDiv[3] = {4, 2, 1};

struct TrainSample {
    Tensor4 image;
    gt::GroundTruthBundle bundle;
};

struct AdamState {
    model::ModelParams m;  // first moments, shaped like the parameters
    model::ModelParams v;  // second moments
    std::int64_t t = 0;
};

AdamState make_adam_state(const model::ModelParams& params);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// patch sides are the image sides divided by 4/2/1, rounded down to
// multiples of 8; ground truth is regenerated from the points inside each
// patch, so a patch's density sums to its own head count
std::vector<TrainSample> crop_patches(const Tensor4& image, const gt::AnnotationSet& ann,
                                      const gt::ClassLabelSpec& spec, double sigma,
                                      std::mt19937_64& rng);

// deterministic effect of the two augmentation coins; flip mirrors image,
// density maps and pyramid levels together, noise perturbs the image only
void augment_apply(TrainSample& sample, bool flip, bool noise, double noise_std,
                   std::mt19937_64& rng);

// draws the flip and noise coins from rng, in that order
void augment(TrainSample& sample, const TrainConfig& cfg, std::mt19937_64& rng);

// standard Adam with bias correction; throws NumericalError naming the
// parameter if its gradient is not finite
void adam_step(model::ModelParams& params, const model::ModelParams& grads, AdamState& state,
               const TrainConfig& cfg);

// one forward/loss/backward/update cycle on a single sample
losses::LossBreakdown train_step(const model::ModelConfig& mcfg, model::ModelParams& params,
                                 AdamState& state, const TrainSample& sample,
                                 const TrainConfig& cfg);

struct TrainResult {
    model::ModelParams params;
    std::vector<losses::LossBreakdown> log;                // one entry per iteration
    std::vector<std::pair<std::int64_t, double>> mae_log;  // (iter, train mae)
};

// log_stream, when set, receives one line per iteration
// `iter, L_hef, L_segs, L_cla, L_overall` and periodic `eval, iter, mae`
TrainResult train(const std::vector<gt::SceneItem>& dataset, const model::ModelConfig& mcfg,
                  const TrainConfig& cfg, std::ostream* log_stream);

}  // namespace ssrhef::trainer
