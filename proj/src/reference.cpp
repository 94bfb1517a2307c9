#include "ssrhef/reference.hpp"

#include <algorithm>
#include <cmath>

namespace ssrhef::ref {

Tensor4 conv2d(const Tensor4& input, const Tensor4& weights, const Vec& bias,
               std::int64_t dilation) {
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t OC = weights.n, KH = weights.h, KW = weights.w;
    const std::int64_t ph = (KH - 1) / 2 * dilation;
    const std::int64_t pw = (KW - 1) / 2 * dilation;

    Tensor4 out(N, OC, H, W);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            for (std::int64_t oy = 0; oy < H; ++oy) {
                for (std::int64_t ox = 0; ox < W; ++ox) {
                    double acc = bias[static_cast<std::size_t>(oc)];
                    for (std::int64_t ic = 0; ic < C; ++ic) {
                        for (std::int64_t ky = 0; ky < KH; ++ky) {
                            const std::int64_t iy = oy + ky * dilation - ph;
                            if (iy < 0 || iy >= H) continue;
                            for (std::int64_t kx = 0; kx < KW; ++kx) {
                                const std::int64_t ix = ox + kx * dilation - pw;
                                if (ix < 0 || ix >= W) continue;
                                acc += weights.at(oc, ic, ky, kx) * input.at(b, ic, iy, ix);
                            }
                        }
                    }
                    out.at(b, oc, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

Tensor4 maxpool2d(const Tensor4& input) {
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t OH = (H + 1) / 2, OW = (W + 1) / 2;
    Tensor4 out(N, C, OH, OW);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            for (std::int64_t oy = 0; oy < OH; ++oy) {
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    double bv = input.at(b, ch, 2 * oy, 2 * ox);
                    for (std::int64_t dy = 0; dy < 2; ++dy) {
                        for (std::int64_t dx = 0; dx < 2; ++dx) {
                            const std::int64_t y = 2 * oy + dy, x = 2 * ox + dx;
                            if (y >= H || x >= W) continue;
                            if (input.at(b, ch, y, x) > bv) bv = input.at(b, ch, y, x);
                        }
                    }
                    out.at(b, ch, oy, ox) = bv;
                }
            }
        }
    }
    return out;
}

Tensor4 channel_pool(const Tensor4& input) {
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    Tensor4 out(N, 2, H, W);
    const double inv_c = 1.0 / static_cast<double>(C);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                double mx = input.at(b, 0, y, x);
                double sum = input.at(b, 0, y, x);
                for (std::int64_t ch = 1; ch < C; ++ch) {
                    const double v = input.at(b, ch, y, x);
                    sum += v;
                    if (v > mx) mx = v;
                }
                out.at(b, 0, y, x) = mx;
                out.at(b, 1, y, x) = sum * inv_c;
            }
        }
    }
    return out;
}

Tensor4 resize_bilinear(const Tensor4& input, std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    Tensor4 out(N, C, out_h, out_w);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const double src_y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
                const double fy = src_y - std::floor(src_y);
                std::int64_t y0 = static_cast<std::int64_t>(std::floor(src_y));
                std::int64_t y1 = y0 + 1;
                y0 = std::clamp<std::int64_t>(y0, 0, H - 1);
                y1 = std::clamp<std::int64_t>(y1, 0, H - 1);
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const double src_x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                    const double fx = src_x - std::floor(src_x);
                    std::int64_t x0 = static_cast<std::int64_t>(std::floor(src_x));
                    std::int64_t x1 = x0 + 1;
                    x0 = std::clamp<std::int64_t>(x0, 0, W - 1);
                    x1 = std::clamp<std::int64_t>(x1, 0, W - 1);
                    out.at(b, ch, oy, ox) =
                        (1.0 - fy) * ((1.0 - fx) * input.at(b, ch, y0, x0) +
                                      fx * input.at(b, ch, y0, x1)) +
                        fy * ((1.0 - fx) * input.at(b, ch, y1, x0) +
                              fx * input.at(b, ch, y1, x1));
                }
            }
        }
    }
    return out;
}

Tensor4 spp_pool(const Tensor4& input) {
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t G = ops::kSppGrid;
    Tensor4 out(N, C * G * G, 1, 1);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            for (std::int64_t by = 0; by < G; ++by) {
                const std::int64_t y0 = by * H / G;
                const std::int64_t y1 = ((by + 1) * H + G - 1) / G;
                for (std::int64_t bx = 0; bx < G; ++bx) {
                    const std::int64_t x0 = bx * W / G;
                    const std::int64_t x1 = ((bx + 1) * W + G - 1) / G;
                    double bv = input.at(b, ch, y0, x0);
                    for (std::int64_t y = y0; y < y1; ++y) {
                        for (std::int64_t x = x0; x < x1; ++x) {
                            if (input.at(b, ch, y, x) > bv) bv = input.at(b, ch, y, x);
                        }
                    }
                    out.v[static_cast<std::size_t>((b * C + ch) * G * G + by * G + bx)] = bv;
                }
            }
        }
    }
    return out;
}

Vec dense(const Vec& input, const Mat& weights, const Vec& bias) {
    Vec out(static_cast<std::size_t>(weights.rows));
    for (std::int64_t r = 0; r < weights.rows; ++r) {
        double acc = bias[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < weights.cols; ++c) {
            acc += weights.a[static_cast<std::size_t>(r * weights.cols + c)] *
                   input[static_cast<std::size_t>(c)];
        }
        out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
}

Tensor4 semantic_refine(const Tensor4& features, const Tensor4& seg_logit) {
    const std::int64_t N = features.n, C = features.c, H = features.h, W = features.w;
    Tensor4 out(N, C, H, W);
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    out.at(b, ch, y, x) =
                        features.at(b, ch, y, x) * sigmoid(seg_logit.at(b, 0, y, x));
                }
            }
        }
    }
    return out;
}

}  // namespace ssrhef::ref
