#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "ssrhef/model.hpp"

using namespace ssrhef;

namespace {

Tensor4 rand_image(std::mt19937_64& rng, std::int64_t side) {
    Tensor4 t(1, 1, side, side);
    fill_uniform(t, rng);
    return t;
}

bool params_equal(const model::ModelParams& a, const model::ModelParams& b) {
    if (a.names != b.names) return false;
    for (const auto& name : a.names) {
        auto sa = model::param_span(a.at(name));
        auto sb = model::param_span(b.at(name));
        if (sa.size() != sb.size()) return false;
        for (std::size_t i = 0; i < sa.size(); ++i) {
            if (sa[i] != sb[i]) return false;
        }
    }
    return true;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("initialization is seed-deterministic") {
    const model::ModelConfig cfg;
    const model::ModelParams a = model::build_model(cfg, 123);
    const model::ModelParams b = model::build_model(cfg, 123);
    const model::ModelParams c = model::build_model(cfg, 124);
    CHECK(params_equal(a, b));
    CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("default configuration stays under the parameter budget") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 1);
    CHECK(model::param_count(p) < 2'500'000);
    CHECK(model::param_count(p) == p.total_scalars());
}

TEST_CASE("doubling base channels roughly quadruples conv parameters") {
    model::ModelConfig narrow, wide;
    narrow.base_channels = 16;
    wide.base_channels = 32;
    const double n = static_cast<double>(model::conv_param_count(model::build_model(narrow, 1)));
    const double w = static_cast<double>(model::conv_param_count(model::build_model(wide, 1)));
    CHECK(w / n >= 3.5);
    CHECK(w / n <= 4.5);
}

TEST_CASE("forward obeys the stride contract across input sizes") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 2);
    std::mt19937_64 rng(41);
    for (std::int64_t side : {32, 48, 80}) {
        const model::ModelOutputs out = model::forward(cfg, p, rand_image(rng, side));
        CHECK(out.density.h == side / 8);
        CHECK(out.density.w == side / 8);
        CHECK(out.seg_logits[0].h == side / 2);
        CHECK(out.seg_logits[1].h == side / 4);
        CHECK(out.seg_logits[2].h == side / 8);
        CHECK(out.class_logits.size() == 15);
    }
}

TEST_CASE("forward rejects sizes not divisible by eight") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 2);
    CHECK_THROWS_AS(model::forward(cfg, p, Tensor4(1, 1, 20, 16)), ShapeError);
    CHECK_THROWS_AS(model::forward(cfg, p, Tensor4(1, 2, 16, 16)), ShapeError);
}

TEST_CASE("zero image produces finite, non-negative density") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 3);
    const model::ModelOutputs out = model::forward(cfg, p, Tensor4(1, 1, 32, 32));
    CHECK(all_finite(out.density.v));
    CHECK(all_finite(out.class_logits));
    for (double x : out.density.v) CHECK(x >= 0.0);
}

TEST_CASE("zero loss gradients give zero parameter gradients") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 4);
    std::mt19937_64 rng(42);
    model::ModelOutputs out = model::forward(cfg, p, rand_image(rng, 32));

    model::LossGrads lg;
    lg.d_density = Tensor4(1, 1, 4, 4);
    lg.d_seg = {Tensor4(1, 1, 16, 16), Tensor4(1, 1, 8, 8), Tensor4(1, 1, 4, 4)};
    lg.d_class_logits = Vec(15, 0.0);
    const model::ModelParams grads = model::backward(cfg, p, out, lg);
    for (const auto& name : grads.names) {
        for (double g : model::param_span(grads.at(name))) CHECK(g == 0.0);
    }
}

TEST_CASE("backward is bit-deterministic") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 5);
    std::mt19937_64 rng(43);
    const Tensor4 img = rand_image(rng, 32);

    model::LossGrads lg;
    lg.d_density = Tensor4(1, 1, 4, 4, 0.3);
    lg.d_seg = {Tensor4(1, 1, 16, 16, 0.1), Tensor4(1, 1, 8, 8, -0.2), Tensor4(1, 1, 4, 4, 0.4)};
    lg.d_class_logits = Vec(15, 0.05);

    model::ModelOutputs o1 = model::forward(cfg, p, img);
    const model::ModelParams g1 = model::backward(cfg, p, o1, lg);
    model::ModelOutputs o2 = model::forward(cfg, p, img);
    const model::ModelParams g2 = model::backward(cfg, p, o2, lg);
    CHECK(params_equal(g1, g2));
}

TEST_CASE("backward rejects a tampered trace") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 6);
    std::mt19937_64 rng(44);
    model::ModelOutputs out = model::forward(cfg, p, rand_image(rng, 32));
    std::swap(out.trace.caches[5], out.trace.caches[10]);

    model::LossGrads lg;
    lg.d_density = Tensor4(1, 1, 4, 4);
    lg.d_seg = {Tensor4(1, 1, 16, 16), Tensor4(1, 1, 8, 8), Tensor4(1, 1, 4, 4)};
    lg.d_class_logits = Vec(15, 0.0);
    CHECK_THROWS_AS(model::backward(cfg, p, out, lg), CacheMismatchError);
}

TEST_CASE("forcing segmentation gates shut silences the density head") {
    const model::ModelConfig cfg;
    model::ModelParams p = model::build_model(cfg, 7);
    std::mt19937_64 rng(45);
    const Tensor4 img = rand_image(rng, 32);
    const model::ModelOutputs open = model::forward(cfg, p, img);

    double open_max = 0.0;
    for (double x : open.density.v) open_max = std::max(open_max, x);
    CHECK(open_max > 0.0);

    // bias the per-scale logits to -1e6: sigma gives 0, every gated feature
    // vanishes, and nothing downstream can produce density (zero biases)
    for (const char* name : {"seg1.b", "seg2.b", "seg3.b"}) {
        for (double& x : model::param_span(p.at(name))) x = -1e6;
    }
    const model::ModelOutputs closed = model::forward(cfg, p, img);
    for (double x : closed.density.v) CHECK(x == 0.0);
    for (double x : closed.class_logits) CHECK(x == 0.0);
}

TEST_CASE("predict_count sums the density map") {
    CHECK(model::predict_count(Tensor4(1, 1, 8, 8)) == 0.0);
    CHECK(model::predict_count(Tensor4(1, 1, 8, 8, 0.25)) == 16.0);

    std::mt19937_64 rng(46);
    Tensor4 m(1, 1, 5, 9);
    fill_uniform(m, rng);
    double want = 0.0;
    for (double x : m.v) want += x;
    CHECK(model::predict_count(m) == want);
}

TEST_CASE("checkpoint round trip is bit-exact and reproduces outputs") {
    const model::ModelConfig cfg;
    const model::ModelParams p = model::build_model(cfg, 8);
    const std::string path1 = "tmp_model_a.ckpt";
    const std::string path2 = "tmp_model_b.ckpt";

    model::save_checkpoint(path1, p);
    const model::ModelParams loaded = model::load_checkpoint(path1);
    model::save_checkpoint(path2, loaded);
    CHECK(params_equal(p, loaded));
    CHECK(slurp(path1) == slurp(path2));

    std::mt19937_64 rng(47);
    const Tensor4 img = rand_image(rng, 32);
    const model::ModelOutputs a = model::forward(cfg, p, img);
    const model::ModelOutputs b = model::forward(cfg, loaded, img);
    CHECK(a.density.v == b.density.v);
    CHECK(a.class_logits == b.class_logits);

    std::remove(path1.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint loading rejects corrupt files") {
    const std::string path = "tmp_model_bad.ckpt";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC and then some bytes";
    }
    CHECK_THROWS_AS(model::load_checkpoint(path), DataError);

    const model::ModelConfig cfg;
    model::ModelParams p = model::build_model(cfg, 9);
    model::save_checkpoint(path, p);
    const std::string full = slurp(path);
    {
        std::ofstream os(path, std::ios::binary);
        os.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    CHECK_THROWS_AS(model::load_checkpoint(path), DataError);

    model::param_span(p.at("den3.b"))[0] = std::numeric_limits<double>::infinity();
    model::save_checkpoint(path, p);
    CHECK_THROWS_AS(model::load_checkpoint(path), DataError);
    std::remove(path.c_str());
}

TEST_CASE("feature enhancement with zero attention weights halves the features") {
    std::mt19937_64 rng(48);
    Tensor4 f(1, 3, 6, 6);
    fill_uniform(f, rng, -1.0, 1.0);
    Tensor4 conv_w(3, 3, 3, 3);
    fill_uniform(conv_w, rng, -0.4, 0.4);
    const Vec conv_b(3, 0.05);
    const Tensor4 att_w(1, 2, 7, 7);
    const Vec att_b(1, 0.0);

    model::Trace trace;
    const Tensor4 out = model::fel_forward(f, conv_w, conv_b, att_w, att_b, trace);

    auto [pre, c1] = ops::conv2d(f, conv_w, conv_b, 1);
    const Tensor4 a = ops::activation(pre, ops::ActKind::Relu).first;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        CHECK(out.v[i] == doctest::Approx(0.5 * a.v[i]).epsilon(1e-15));
        CHECK(std::abs(out.v[i]) <= std::abs(a.v[i]));
    }
}
