#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "ssrhef/tensor.hpp"

namespace ssrhef::ops {

// Differentiable building blocks. Every forward returns its output together
// with an OpCache holding what the matching backward needs; a backward called
// with a cache of the wrong kind throws CacheMismatchError. All functions are
// pure: no shared mutable state, bit-identical results for identical inputs
// regardless of thread count (each output element has a single writer and a
// fixed accumulation order).

enum class ActKind { Relu, Sigmoid };

inline constexpr std::int64_t kSppGrid = 16;

struct ConvCache {
    Tensor4 input;
    Tensor4 weights;
    std::int64_t dilation = 1;
    std::array<std::int64_t, 4> out_dims{};
};

struct PoolCache {
    std::array<std::int64_t, 4> in_dims{};
    std::array<std::int64_t, 4> out_dims{};
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

struct ChannelPoolCache {
    std::array<std::int64_t, 4> in_dims{};
    std::vector<std::int32_t> argmax_channel;  // per (batch, pixel)
};

struct ResizeCache {
    std::array<std::int64_t, 4> in_dims{};
    std::array<std::int64_t, 4> out_dims{};
};

struct ActCache {
    ActKind kind = ActKind::Relu;
    Tensor4 output;
};

struct SppCache {
    std::array<std::int64_t, 4> in_dims{};
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

struct DenseCache {
    Vec input;
    Mat weights;
};

struct RefineCache {
    Tensor4 features;
    Tensor4 gate;  // sigmoid(logit), single channel
};

struct ConcatCache {
    std::vector<std::int64_t> part_channels;
    std::array<std::int64_t, 4> out_dims{};
};

using CachePayload = std::variant<ConvCache, PoolCache, ChannelPoolCache, ResizeCache, ActCache,
                                  SppCache, DenseCache, RefineCache, ConcatCache>;

struct OpCache {
    std::uint64_t tag = 0;  // unique per forward call
    CachePayload payload;
};

const char* cache_kind_name(const OpCache& cache);

/// Throwing accessor used by every backward; the tag check that pairs a
/// backward with its forward.
template <typename T>
const T& expect_cache(const OpCache& cache, const char* want) {
    const T* p = std::get_if<T>(&cache.payload);
    if (p == nullptr) {
        throw CacheMismatchError(std::string("cache tag mismatch: expected ") + want + ", got " +
                                 cache_kind_name(cache));
    }
    return *p;
}

// -- convolution (stride 1, "same" zero padding, odd kernels, dilation >= 1) --
std::pair<Tensor4, OpCache> conv2d(const Tensor4& input, const Tensor4& weights, const Vec& bias,
                                   std::int64_t dilation);
struct ConvGrads {
    Tensor4 input;
    Tensor4 weights;
    Vec bias;
};
ConvGrads conv2d_backward(const OpCache& cache, const Tensor4& grad_out);

// -- 2x2 stride-2 max pooling; odd dims padded right/bottom with the most
//    negative finite value; ties break to the first window position in
//    row-major scan order --
std::pair<Tensor4, OpCache> maxpool2d(const Tensor4& input);
Tensor4 maxpool2d_backward(const OpCache& cache, const Tensor4& grad_out);

// -- per-pixel max and mean over channels (channel 0 = max, channel 1 = mean) --
std::pair<Tensor4, OpCache> channel_pool(const Tensor4& input);
Tensor4 channel_pool_backward(const OpCache& cache, const Tensor4& grad_out);

// -- bilinear resize, align-corners false --
std::pair<Tensor4, OpCache> resize_bilinear(const Tensor4& input, std::int64_t out_h,
                                            std::int64_t out_w);
Tensor4 resize_bilinear_backward(const OpCache& cache, const Tensor4& grad_out);

// -- elementwise activations --
std::pair<Tensor4, OpCache> activation(const Tensor4& input, ActKind kind);
Tensor4 activation_backward(const OpCache& cache, const Tensor4& grad_out);

// -- adaptive max pooling onto a fixed 16x16 grid, flattened per batch item
//    to (n, channels*256, 1, 1) --
std::pair<Tensor4, OpCache> spp_pool(const Tensor4& input);
Tensor4 spp_pool_backward(const OpCache& cache, const Tensor4& grad_out);

// -- affine map --
std::pair<Vec, OpCache> dense(const Vec& input, const Mat& weights, const Vec& bias);
struct DenseGrads {
    Vec input;
    Mat weights;
    Vec bias;
};
DenseGrads dense_backward(const OpCache& cache, const Vec& grad_out);

// -- gate features by the sigmoid of a single-channel logit map, broadcast
//    across channels: out[c] = f[c] * sigmoid(logit) --
std::pair<Tensor4, OpCache> semantic_refine(const Tensor4& features, const Tensor4& seg_logit);
struct RefineGrads {
    Tensor4 features;
    Tensor4 logit;
};
RefineGrads semantic_refine_backward(const OpCache& cache, const Tensor4& grad_out);

// -- channel concatenation --
std::pair<Tensor4, OpCache> concat_channels(const std::vector<const Tensor4*>& parts);
std::vector<Tensor4> concat_channels_backward(const OpCache& cache, const Tensor4& grad_out);

}  // namespace ssrhef::ops
