// Timing harness: each OpenMP kernel against its serial reference on
// training-sized inputs. The diff column must print 0 exactly; any other
// value means the parallel kernel broke bit determinism.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "ssrhef/ops.hpp"
#include "ssrhef/reference.hpp"

using namespace ssrhef;

namespace {

double now_ms() {
    const auto t = std::chrono::steady_clock::now().time_since_epoch();
    return std::chrono::duration<double, std::milli>(t).count();
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const double t0 = now_ms();
    for (int i = 0; i < reps; ++i) fn();
    return (now_ms() - t0) / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-16s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   max|diff| %g\n",
                name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
    std::mt19937_64 rng(7);
    constexpr int kReps = 5;

    {
        Tensor4 input(1, 64, 64, 64);
        Tensor4 weights(64, 64, 3, 3);
        Vec bias(64);
        fill_uniform(input, rng, -1.0, 1.0);
        fill_uniform(weights, rng, -0.1, 0.1);
        for (double& b : bias) b = uniform_in(rng, -0.1, 0.1);

        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::conv2d(input, weights, bias, 1); }, kReps);
        const double tp =
            time_ms([&] { out_par = ops::conv2d(input, weights, bias, 1).first; }, kReps);
        report("conv2d", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    {
        Tensor4 input(1, 64, 128, 128);
        fill_uniform(input, rng, -1.0, 1.0);
        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::maxpool2d(input); }, kReps);
        const double tp = time_ms([&] { out_par = ops::maxpool2d(input).first; }, kReps);
        report("maxpool2d", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    {
        Tensor4 input(1, 64, 128, 128);
        fill_uniform(input, rng, -1.0, 1.0);
        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::channel_pool(input); }, kReps);
        const double tp = time_ms([&] { out_par = ops::channel_pool(input).first; }, kReps);
        report("channel_pool", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    {
        Tensor4 input(1, 64, 32, 32);
        fill_uniform(input, rng, -1.0, 1.0);
        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::resize_bilinear(input, 128, 128); }, kReps);
        const double tp =
            time_ms([&] { out_par = ops::resize_bilinear(input, 128, 128).first; }, kReps);
        report("resize_bilinear", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    {
        Tensor4 input(1, 64, 64, 64);
        fill_uniform(input, rng, -1.0, 1.0);
        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::spp_pool(input); }, kReps);
        const double tp = time_ms([&] { out_par = ops::spp_pool(input).first; }, kReps);
        report("spp_pool", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    {
        Vec input(4096);
        Mat weights(256, 4096);
        Vec bias(256);
        for (double& x : input) x = uniform_in(rng, -1.0, 1.0);
        for (double& x : weights.a) x = uniform_in(rng, -0.1, 0.1);
        for (double& x : bias) x = uniform_in(rng, -0.1, 0.1);
        Vec out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::dense(input, weights, bias); }, kReps);
        const double tp = time_ms([&] { out_par = ops::dense(input, weights, bias).first; }, kReps);
        report("dense", ts, tp, max_abs_diff(out_ref, out_par));
    }
    {
        Tensor4 features(1, 64, 64, 64);
        Tensor4 logit(1, 1, 64, 64);
        fill_uniform(features, rng, -1.0, 1.0);
        fill_uniform(logit, rng, -2.0, 2.0);
        Tensor4 out_ref, out_par;
        const double ts = time_ms([&] { out_ref = ref::semantic_refine(features, logit); }, kReps);
        const double tp =
            time_ms([&] { out_par = ops::semantic_refine(features, logit).first; }, kReps);
        report("semantic_refine", ts, tp, max_abs_diff(out_ref.v, out_par.v));
    }
    return 0;
}
