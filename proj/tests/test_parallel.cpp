#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <cstdint>
#include <random>

#include "ssrhef/model.hpp"
#include "ssrhef/ops.hpp"
#include "ssrhef/reference.hpp"

using namespace ssrhef;

namespace {

Tensor4 rand_t(std::mt19937_64& rng, std::int64_t n, std::int64_t c, std::int64_t h,
               std::int64_t w) {
    Tensor4 t(n, c, h, w);
    fill_uniform(t, rng, -1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("conv2d agrees with the serial reference bit for bit") {
    std::mt19937_64 rng(301);
    for (int trial = 0; trial < 12; ++trial) {
        const std::int64_t n = 1 + trial % 2;
        const std::int64_t cin = 1 + trial % 3;
        const std::int64_t cout = 1 + (trial + 1) % 4;
        const std::int64_t h = 5 + trial;
        const std::int64_t w = 20 - trial;
        const std::int64_t k = 2 * (trial % 4) + 1;  // 1, 3, 5, 7
        const std::int64_t dil = 1 + trial % 4;

        const Tensor4 x = rand_t(rng, n, cin, h, w);
        const Tensor4 kw = rand_t(rng, cout, cin, k, k);
        Vec b(static_cast<std::size_t>(cout));
        for (double& v : b) v = uniform_in(rng, -0.5, 0.5);

        const auto [y, cache] = ops::conv2d(x, kw, b, dil);
        const Tensor4 yr = ref::conv2d(x, kw, b, dil);
        REQUIRE(y.same_dims(yr));
        CHECK(y.v == yr.v);
    }
}

TEST_CASE("maxpool2d agrees with the serial reference on odd and even dims") {
    std::mt19937_64 rng(302);
    for (std::int64_t h : {2, 3, 7, 16}) {
        for (std::int64_t w : {2, 5, 9, 16}) {
            const Tensor4 x = rand_t(rng, 2, 3, h, w);
            const auto [y, cache] = ops::maxpool2d(x);
            CHECK(y.v == ref::maxpool2d(x).v);
        }
    }
}

TEST_CASE("channel_pool agrees with the serial reference") {
    std::mt19937_64 rng(303);
    for (std::int64_t c : {1, 2, 7, 32}) {
        const Tensor4 x = rand_t(rng, 2, c, 6, 5);
        const auto [y, cache] = ops::channel_pool(x);
        CHECK(y.v == ref::channel_pool(x).v);
    }
}

TEST_CASE("resize_bilinear agrees with the serial reference up and down") {
    std::mt19937_64 rng(304);
    const std::int64_t shapes[][4] = {{4, 4, 8, 8}, {4, 4, 16, 12}, {7, 5, 3, 11}, {6, 9, 6, 9}};
    for (const auto& s : shapes) {
        const Tensor4 x = rand_t(rng, 1, 3, s[0], s[1]);
        const auto [y, cache] = ops::resize_bilinear(x, s[2], s[3]);
        CHECK(y.v == ref::resize_bilinear(x, s[2], s[3]).v);
    }
}

TEST_CASE("spp_pool agrees with the serial reference") {
    std::mt19937_64 rng(305);
    const std::int64_t shapes[][2] = {{16, 16}, {17, 23}, {8, 40}, {3, 5}};
    for (const auto& hw : shapes) {
        const Tensor4 x = rand_t(rng, 1, 4, hw[0], hw[1]);
        const auto [y, cache] = ops::spp_pool(x);
        CHECK(y.v == ref::spp_pool(x).v);
    }
}

TEST_CASE("dense agrees with the serial reference") {
    std::mt19937_64 rng(306);
    const std::int64_t sizes[][2] = {{1, 1}, {15, 64}, {64, 1024}};
    for (const auto& rc : sizes) {
        Mat w(rc[0], rc[1]);
        for (double& v : w.a) v = uniform_in(rng, -1.0, 1.0);
        Vec x(static_cast<std::size_t>(rc[1])), b(static_cast<std::size_t>(rc[0]));
        for (double& v : x) v = uniform_in(rng, -1.0, 1.0);
        for (double& v : b) v = uniform_in(rng, -1.0, 1.0);
        const auto [y, cache] = ops::dense(x, w, b);
        CHECK(y == ref::dense(x, w, b));
    }
}

TEST_CASE("semantic_refine agrees with the serial reference") {
    std::mt19937_64 rng(307);
    const Tensor4 f = rand_t(rng, 2, 6, 9, 7);
    const Tensor4 s = rand_t(rng, 2, 1, 9, 7);
    const auto [y, cache] = ops::semantic_refine(f, s);
    CHECK(y.v == ref::semantic_refine(f, s).v);
}

TEST_CASE("results are independent of the OpenMP thread count") {
    const int saved = omp_get_max_threads();

    std::mt19937_64 rng(308);
    const Tensor4 x = rand_t(rng, 1, 8, 40, 40);
    const Tensor4 kw = rand_t(rng, 16, 8, 3, 3);
    Vec b(16);
    for (double& v : b) v = uniform_in(rng, -0.5, 0.5);

    omp_set_num_threads(1);
    const Tensor4 y1 = ops::conv2d(x, kw, b, 2).first;
    omp_set_num_threads(4);
    const Tensor4 y4 = ops::conv2d(x, kw, b, 2).first;
    CHECK(y1.v == y4.v);

    // whole-network forward as well: one output, many kernels underneath
    model::ModelConfig cfg;
    cfg.base_channels = 4;
    const model::ModelParams params = model::build_model(cfg, 99);
    Tensor4 img(1, 1, 32, 32);
    std::mt19937_64 rng2(309);
    fill_uniform(img, rng2);

    omp_set_num_threads(1);
    model::ModelOutputs o1 = model::forward(cfg, params, img);
    omp_set_num_threads(4);
    model::ModelOutputs o4 = model::forward(cfg, params, img);
    CHECK(o1.density.v == o4.density.v);
    CHECK(o1.class_logits == o4.class_logits);
    for (int m = 0; m < 3; ++m) {
        CHECK(o1.seg_logits[static_cast<std::size_t>(m)].v ==
              o4.seg_logits[static_cast<std::size_t>(m)].v);
    }

    omp_set_num_threads(saved);
}
