#pragma once

// The full counting network: dilated four-branch stem, three conv/pool
// stages, per-scale segmentation heads whose sigmoid maps gate the features,
// multi-scale fusion, a classification branch over pooled features, a
// spatial-attention enhancement layer, and the density regression head.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ssrhef/ops.hpp"

namespace ssrhef::model {

struct ModelConfig {
    std::int64_t base_channels = 16;
    std::array<std::int64_t, 4> dilations{1, 2, 3, 4};
    std::int64_t num_classes = 15;
    std::int64_t output_stride = 8;  // fixed by the three pooling stages
};

using ParamValue = std::variant<Vec, Mat, Tensor4>;

// span over the scalars of a parameter regardless of rank
std::span<double> param_span(ParamValue& v);
std::span<const double> param_span(const ParamValue& v);
std::int64_t param_size(const ParamValue& v);

/// Ordered named parameter map. Iteration order is the registration order and
/// is identical between save and load; gradients and optimizer moments reuse
/// this container shape-aligned name-for-name.
struct ModelParams {
    std::vector<std::string> names;
    std::unordered_map<std::string, ParamValue> values;

    void add(const std::string& name, ParamValue v);
    bool has(const std::string& name) const { return values.count(name) != 0; }
    ParamValue& at(const std::string& name);
    const ParamValue& at(const std::string& name) const;

    Tensor4& t4(const std::string& name);
    const Tensor4& t4(const std::string& name) const;
    Mat& mat(const std::string& name);
    const Mat& mat(const std::string& name) const;
    Vec& vec(const std::string& name);
    const Vec& vec(const std::string& name) const;

    std::int64_t total_scalars() const;
};

// zero-filled copy with identical names and shapes
ModelParams zeros_like(const ModelParams& p);

// conv_only counts rank-4 weights plus their biases, skipping dense layers
std::int64_t param_count(const ModelParams& p);
std::int64_t conv_param_count(const ModelParams& p);

/// Forward execution trace. Backward pops caches in strict reverse order;
/// each pop verifies the cache tag recorded when it was pushed, so a cache
/// swapped in from another forward call is rejected.
struct Trace {
    std::vector<ops::OpCache> caches;
    std::vector<std::uint64_t> tags;

    void push(ops::OpCache c);
    ops::OpCache pop();
    std::size_t depth() const { return caches.size(); }
};

struct ModelOutputs {
    Tensor4 density;                    // (1, 1, H/8, W/8), non-negative
    std::array<Tensor4, 3> seg_logits;  // strides 2, 4, 8
    Vec class_logits;                   // length num_classes
    Trace trace;
};

struct LossGrads {
    Tensor4 d_density;
    std::array<Tensor4, 3> d_seg;
    Vec d_class_logits;
};

// deterministic He-style initialization from the seed; biases zero
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

// image is (1, 1, H, W) grayscale in [0, 1] with H, W divisible by 8
ModelOutputs forward(const ModelConfig& cfg, const ModelParams& params, const Tensor4& image);

// consumes outputs.trace; grads aligned name-for-name with params
ModelParams backward(const ModelConfig& cfg, const ModelParams& params, ModelOutputs& outputs,
                     const LossGrads& grads);

double predict_count(const Tensor4& density);

// standalone enhancement layer: a = relu(conv3x3(f)); s = sigmoid(conv7x7(
// channel_pool(a))); out = a * s broadcast over channels
Tensor4 fel_forward(const Tensor4& f, const Tensor4& conv_w, const Vec& conv_b,
                    const Tensor4& att_w, const Vec& att_b, Trace& trace);
struct FelGrads {
    Tensor4 input;
    Tensor4 conv_w;
    Vec conv_b;
    Tensor4 att_w;
    Vec att_b;
};
FelGrads fel_backward(Trace& trace, const Tensor4& grad_out);

// CKPT container: magic "SSRHEF01", entry count, then per entry name length,
// name bytes, rank, dims, 64-bit little-endian values. Bit-exact round trip.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace ssrhef::model
