#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "ssrhef/synth.hpp"
#include "ssrhef/trainer.hpp"

using namespace ssrhef;

namespace {

bool params_equal(const model::ModelParams& a, const model::ModelParams& b) {
    if (a.names != b.names) return false;
    for (const auto& name : a.names) {
        auto sa = model::param_span(a.at(name));
        auto sb = model::param_span(b.at(name));
        for (std::size_t i = 0; i < sa.size(); ++i) {
            if (sa[i] != sb[i]) return false;
        }
    }
    return true;
}

trainer::TrainSample make_sample() {
    gt::AnnotationSet ann;
    ann.height = 32;
    ann.width = 40;
    ann.points = {{5.5, 10.0}, {30.0, 20.25}, {39.0, 0.0}};
    const gt::ClassLabelSpec spec = gt::compute_thr({3.0}, 15);

    trainer::TrainSample s;
    s.image = Tensor4(1, 1, 32, 40);
    std::mt19937_64 rng(77);
    fill_uniform(s.image, rng);
    s.bundle = gt::make_bundle(ann, 4.0, spec);
    return s;
}

}  // namespace

TEST_CASE("cropping yields the fixed 9 + 4 + 1 patch plan") {
    std::mt19937_64 rng(51);
    Tensor4 img(1, 1, 64, 64);
    fill_uniform(img, rng);
    gt::AnnotationSet ann;
    ann.height = 64;
    ann.width = 64;
    ann.points = {{3.0, 3.0}, {32.0, 40.5}, {60.0, 10.0}, {20.0, 62.0}, {45.5, 45.5}};
    const gt::ClassLabelSpec spec = gt::compute_thr({5.0}, 15);

    const auto patches = trainer::crop_patches(img, ann, spec, 4.0, rng);
    REQUIRE(patches.size() == 14);
    for (int i = 0; i < 9; ++i) CHECK(patches[static_cast<std::size_t>(i)].image.h == 16);
    for (int i = 9; i < 13; ++i) CHECK(patches[static_cast<std::size_t>(i)].image.h == 32);
    CHECK(patches[13].image.h == 64);

    // the full-image patch keeps every head
    CHECK(patches[13].bundle.head_count == 5);

    // each patch's density integrates to its own head count
    for (const auto& p : patches) {
        CHECK(p.image.h % 8 == 0);
        CHECK(p.image.w % 8 == 0);
        const double n = static_cast<double>(p.bundle.head_count);
        CHECK(std::abs(p.bundle.density.values.sum() - n) < 1e-6 * std::max(1.0, n));
        CHECK(std::abs(p.bundle.density8.values.sum() - n) < 1e-6 * std::max(1.0, n));
    }
}

TEST_CASE("cropping rounds patch sides down to multiples of eight") {
    std::mt19937_64 rng(52);
    Tensor4 img(1, 1, 40, 36);
    fill_uniform(img, rng);
    gt::AnnotationSet ann;
    ann.height = 40;
    ann.width = 36;
    const gt::ClassLabelSpec spec = gt::compute_thr({0.0}, 15);

    const auto patches = trainer::crop_patches(img, ann, spec, 4.0, rng);
    CHECK(patches[0].image.h == 8);   // 40/4 = 10 -> 8
    CHECK(patches[0].image.w == 8);   // 36/4 = 9 -> 8
    CHECK(patches[9].image.h == 16);  // 40/2 = 20 -> 16
    CHECK(patches[9].image.w == 16);
    CHECK(patches[13].image.h == 40);
    CHECK(patches[13].image.w == 32);  // 36 -> 32
}

TEST_CASE("cropping rejects images below the minimum size") {
    std::mt19937_64 rng(53);
    gt::AnnotationSet ann;
    ann.height = 24;
    ann.width = 24;
    const gt::ClassLabelSpec spec = gt::compute_thr({0.0}, 15);
    CHECK_THROWS_AS(trainer::crop_patches(Tensor4(1, 1, 24, 24), ann, spec, 4.0, rng),
                    DataError);
}

TEST_CASE("flip applied twice is the identity") {
    const trainer::TrainSample orig = make_sample();
    trainer::TrainSample s = orig;
    std::mt19937_64 rng(54);
    trainer::augment_apply(s, true, false, 0.01, rng);
    CHECK_FALSE(s.image.v == orig.image.v);
    trainer::augment_apply(s, true, false, 0.01, rng);
    CHECK(s.image.v == orig.image.v);
    CHECK(s.bundle.density.values.v == orig.bundle.density.values.v);
    CHECK(s.bundle.density8.values.v == orig.bundle.density8.values.v);
    for (int m = 0; m < 3; ++m) {
        CHECK(s.bundle.pyramid.levels[static_cast<std::size_t>(m)].v ==
              orig.bundle.pyramid.levels[static_cast<std::size_t>(m)].v);
    }
}

TEST_CASE("flip preserves density mass and labels") {
    trainer::TrainSample s = make_sample();
    const double before = s.bundle.density.values.sum();
    const std::int64_t label = s.bundle.class_label;
    std::mt19937_64 rng(55);
    trainer::augment_apply(s, true, false, 0.01, rng);
    CHECK(s.bundle.density.values.sum() == before);
    CHECK(s.bundle.class_label == label);
}

TEST_CASE("noise perturbs only the image and respects the unit range") {
    const trainer::TrainSample orig = make_sample();
    trainer::TrainSample s = orig;
    std::mt19937_64 rng(56);
    trainer::augment_apply(s, false, true, 0.05, rng);
    CHECK_FALSE(s.image.v == orig.image.v);
    CHECK(s.bundle.density.values.v == orig.bundle.density.values.v);
    CHECK(s.bundle.density8.values.v == orig.bundle.density8.values.v);
    for (double x : s.image.v) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    model::ModelConfig cfg;
    cfg.base_channels = 2;
    model::ModelParams p = model::build_model(cfg, 10);
    const model::ModelParams before = p;
    const model::ModelParams grads = model::zeros_like(p);
    trainer::AdamState st = trainer::make_adam_state(p);
    trainer::TrainConfig tc;
    trainer::adam_step(p, grads, st, tc);
    CHECK(st.t == 1);
    CHECK(params_equal(p, before));
}

TEST_CASE("first adam step approximates a signed learning-rate step") {
    model::ModelParams p;
    p.add("x", Vec{0.5, -0.25});
    model::ModelParams g = model::zeros_like(p);
    model::param_span(g.at("x"))[0] = 0.3;
    model::param_span(g.at("x"))[1] = -4.0;

    trainer::AdamState st = trainer::make_adam_state(p);
    trainer::TrainConfig tc;
    tc.lr = 1e-3;
    trainer::adam_step(p, g, st, tc);

    const double d0 = model::param_span(p.at("x"))[0] - 0.5;
    const double d1 = model::param_span(p.at("x"))[1] - (-0.25);
    CHECK(std::abs(d0 + tc.lr) < 1e-3 * tc.lr);
    CHECK(std::abs(d1 - tc.lr) < 1e-3 * tc.lr);
}

TEST_CASE("adam at zero learning rate still accumulates moments") {
    model::ModelParams p;
    p.add("x", Vec{1.0});
    model::ModelParams g = model::zeros_like(p);
    model::param_span(g.at("x"))[0] = 2.0;

    trainer::AdamState st = trainer::make_adam_state(p);
    trainer::TrainConfig tc;
    tc.lr = 0.0;
    trainer::adam_step(p, g, st, tc);
    CHECK(model::param_span(p.at("x"))[0] == 1.0);
    CHECK(model::param_span(st.m.at("x"))[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(model::param_span(st.v.at("x"))[0] == doctest::Approx(0.004).epsilon(1e-12));
}

TEST_CASE("adam names the parameter with a non-finite gradient") {
    model::ModelParams p;
    p.add("w.broken", Vec{1.0});
    model::ModelParams g = model::zeros_like(p);
    model::param_span(g.at("w.broken"))[0] = std::numeric_limits<double>::quiet_NaN();
    trainer::AdamState st = trainer::make_adam_state(p);
    trainer::TrainConfig tc;
    try {
        trainer::adam_step(p, g, st, tc);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("w.broken") != std::string::npos);
    }
}

TEST_CASE("zero-iteration training returns the seed initialization") {
    synth::SynthConfig sc;
    sc.image_size = 32;
    sc.n_easy = 2;
    sc.n_hard = 1;
    sc.seed = 500;
    const std::vector<gt::SceneItem> data{synth::synth_scene(sc)};

    model::ModelConfig mcfg;
    mcfg.base_channels = 2;
    trainer::TrainConfig tc;
    tc.iterations = 0;
    tc.seed = 9;
    const trainer::TrainResult res = trainer::train(data, mcfg, tc, nullptr);
    CHECK(res.log.empty());
    CHECK(params_equal(res.params, model::build_model(mcfg, 9)));
}

TEST_CASE("training is bit-reproducible and logs in the fixed format") {
    synth::SynthConfig sc;
    sc.image_size = 32;
    sc.n_easy = 2;
    sc.n_hard = 1;
    sc.seed = 501;
    const std::vector<gt::SceneItem> data{synth::synth_scene(sc)};

    model::ModelConfig mcfg;
    mcfg.base_channels = 2;
    trainer::TrainConfig tc;
    tc.iterations = 6;
    tc.eval_every = 3;
    tc.seed = 12;

    std::ostringstream log1, log2;
    const trainer::TrainResult r1 = trainer::train(data, mcfg, tc, &log1);
    const trainer::TrainResult r2 = trainer::train(data, mcfg, tc, &log2);
    CHECK(log1.str() == log2.str());
    CHECK(params_equal(r1.params, r2.params));
    REQUIRE(r1.log.size() == 6);
    REQUIRE(r1.mae_log.size() == 2);
    CHECK(r1.mae_log[0].first == 3);
    CHECK(r1.mae_log[1].first == 6);

    // one line per iteration plus the two eval lines
    std::istringstream is(log1.str());
    std::string line;
    int iter_lines = 0, eval_lines = 0;
    while (std::getline(is, line)) {
        long long it = 0;
        double a = 0, b = 0, c = 0, d = 0;
        if (std::sscanf(line.c_str(), "eval, %lld, %lf", &it, &a) == 2) {
            ++eval_lines;
        } else {
            REQUIRE(std::sscanf(line.c_str(), "%lld, %lf, %lf, %lf, %lf", &it, &a, &b, &c, &d) ==
                    5);
            ++iter_lines;
            CHECK(std::abs(d - (a + tc.lambda_seg * b + tc.lambda_cla * c)) < 1e-8);
        }
    }
    CHECK(iter_lines == 6);
    CHECK(eval_lines == 2);
}

TEST_CASE("training rejects an empty dataset") {
    model::ModelConfig mcfg;
    trainer::TrainConfig tc;
    CHECK_THROWS_AS(trainer::train({}, mcfg, tc, nullptr), DataError);
}

TEST_CASE("gradient clipping bounds the update without changing the contract") {
    synth::SynthConfig sc;
    sc.image_size = 32;
    sc.n_easy = 2;
    sc.n_hard = 1;
    sc.seed = 502;
    const std::vector<gt::SceneItem> data{synth::synth_scene(sc)};

    model::ModelConfig mcfg;
    mcfg.base_channels = 2;
    trainer::TrainConfig tc;
    tc.iterations = 3;
    tc.eval_every = 0;
    tc.seed = 13;

    const trainer::TrainResult plain = trainer::train(data, mcfg, tc, nullptr);
    tc.clip = 1e-6;  // absurdly tight: every step is rescaled
    const trainer::TrainResult clipped = trainer::train(data, mcfg, tc, nullptr);
    CHECK_FALSE(params_equal(plain.params, clipped.params));

    // with clipping off the flag must not alter anything
    tc.clip = 0.0;
    const trainer::TrainResult again = trainer::train(data, mcfg, tc, nullptr);
    CHECK(params_equal(plain.params, again.params));
}
