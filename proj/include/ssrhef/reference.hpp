#pragma once

// Serial reference kernels. Plain nested loops, no OpenMP, no blocking.
// The parallel kernels in ssrhef::ops must match these bit for bit; the
// test suite and the bench tool both compare against them.

#include "ssrhef/ops.hpp"

namespace ssrhef::ref {

Tensor4 conv2d(const Tensor4& input, const Tensor4& weights, const Vec& bias,
               std::int64_t dilation);
Tensor4 maxpool2d(const Tensor4& input);
Tensor4 channel_pool(const Tensor4& input);
Tensor4 resize_bilinear(const Tensor4& input, std::int64_t out_h, std::int64_t out_w);
Tensor4 spp_pool(const Tensor4& input);
Vec dense(const Vec& input, const Mat& weights, const Vec& bias);
Tensor4 semantic_refine(const Tensor4& features, const Tensor4& seg_logit);

}  // namespace ssrhef::ref
