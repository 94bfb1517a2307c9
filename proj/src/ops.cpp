#include "ssrhef/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace ssrhef::ops {

namespace {

std::atomic<std::uint64_t> g_next_tag{1};

OpCache make_cache(CachePayload payload) {
    return OpCache{g_next_tag.fetch_add(1, std::memory_order_relaxed), std::move(payload)};
}

void check_grad_dims(const std::array<std::int64_t, 4>& want, const Tensor4& grad,
                     const char* op) {
    if (grad.dims() != want) {
        std::ostringstream os;
        os << op << ": grad_out dims (" << grad.n << "," << grad.c << "," << grad.h << ","
           << grad.w << ") do not match forward output (" << want[0] << "," << want[1] << ","
           << want[2] << "," << want[3] << ")";
        throw ShapeError(os.str());
    }
}

}  // namespace

const char* cache_kind_name(const OpCache& cache) {
    switch (cache.payload.index()) {
        case 0: return "conv2d";
        case 1: return "maxpool2d";
        case 2: return "channel_pool";
        case 3: return "resize_bilinear";
        case 4: return "activation";
        case 5: return "spp_pool";
        case 6: return "dense";
        case 7: return "semantic_refine";
        case 8: return "concat_channels";
        default: return "unknown";
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> conv2d(const Tensor4& input, const Tensor4& weights, const Vec& bias,
                                   std::int64_t dilation) {
    if (dilation < 1) {
        throw ShapeError("conv2d: dilation must be positive, got " + std::to_string(dilation));
    }
    if (weights.h % 2 == 0 || weights.w % 2 == 0) {
        throw ShapeError("conv2d: kernel dims must be odd, got " + weights.dims_str());
    }
    if (input.c != weights.c) {
        throw ShapeError("conv2d: input channels do not match kernel: input " + input.dims_str() +
                         " vs weights " + weights.dims_str());
    }
    if (static_cast<std::int64_t>(bias.size()) != weights.n) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                         " does not match out channels of weights " + weights.dims_str());
    }

    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t OC = weights.n, KH = weights.h, KW = weights.w;
    const std::int64_t ph = (KH - 1) / 2 * dilation;
    const std::int64_t pw = (KW - 1) / 2 * dilation;

    Tensor4 out(N, OC, H, W);

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t oc = 0; oc < OC; ++oc) {
            double* outp = out.plane(b, oc);
            std::fill(outp, outp + H * W, bias[static_cast<std::size_t>(oc)]);
            for (std::int64_t ic = 0; ic < C; ++ic) {
                const double* inp = input.plane(b, ic);
                for (std::int64_t ky = 0; ky < KH; ++ky) {
                    const std::int64_t dy = ky * dilation - ph;
                    const std::int64_t oy0 = std::max<std::int64_t>(0, -dy);
                    const std::int64_t oy1 = std::min<std::int64_t>(H, H - dy);
                    for (std::int64_t kx = 0; kx < KW; ++kx) {
                        const double wv = weights.at(oc, ic, ky, kx);
                        const std::int64_t dx = kx * dilation - pw;
                        const std::int64_t ox0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t ox1 = std::min<std::int64_t>(W, W - dx);
                        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
                            double* orow = outp + oy * W;
                            const double* irow = inp + (oy + dy) * W + dx;
                            for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                orow[ox] += wv * irow[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    OpCache cache = make_cache(ConvCache{input, weights, dilation, out.dims()});
    return {std::move(out), std::move(cache)};
}

ConvGrads conv2d_backward(const OpCache& cache, const Tensor4& grad_out) {
    const ConvCache& cc = expect_cache<ConvCache>(cache, "conv2d");
    check_grad_dims(cc.out_dims, grad_out, "conv2d_backward");

    const Tensor4& input = cc.input;
    const Tensor4& weights = cc.weights;
    const std::int64_t d = cc.dilation;
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t OC = weights.n, KH = weights.h, KW = weights.w;
    const std::int64_t ph = (KH - 1) / 2 * d;
    const std::int64_t pw = (KW - 1) / 2 * d;

    ConvGrads g{Tensor4(N, C, H, W), Tensor4(OC, C, KH, KW), Vec(static_cast<std::size_t>(OC), 0.0)};

    // bias and weight grads: one out-channel per thread, fixed inner order
#pragma omp parallel for schedule(static)
    for (std::int64_t oc = 0; oc < OC; ++oc) {
        double bsum = 0.0;
        for (std::int64_t b = 0; b < N; ++b) {
            const double* gp = grad_out.plane(b, oc);
            for (std::int64_t i = 0; i < H * W; ++i) bsum += gp[i];
        }
        g.bias[static_cast<std::size_t>(oc)] = bsum;

        for (std::int64_t ic = 0; ic < C; ++ic) {
            for (std::int64_t ky = 0; ky < KH; ++ky) {
                const std::int64_t dy = ky * d - ph;
                const std::int64_t oy0 = std::max<std::int64_t>(0, -dy);
                const std::int64_t oy1 = std::min<std::int64_t>(H, H - dy);
                for (std::int64_t kx = 0; kx < KW; ++kx) {
                    const std::int64_t dx = kx * d - pw;
                    const std::int64_t ox0 = std::max<std::int64_t>(0, -dx);
                    const std::int64_t ox1 = std::min<std::int64_t>(W, W - dx);
                    double acc = 0.0;
                    for (std::int64_t b = 0; b < N; ++b) {
                        const double* gp = grad_out.plane(b, oc);
                        const double* inp = input.plane(b, ic);
                        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
                            const double* grow = gp + oy * W;
                            const double* irow = inp + (oy + dy) * W + dx;
                            for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                acc += grow[ox] * irow[ox];
                            }
                        }
                    }
                    g.weights.at(oc, ic, ky, kx) = acc;
                }
            }
        }
    }

    // input grad in gather form: each input element sums over (oc, ky, kx)
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ic = 0; ic < C; ++ic) {
            double* gip = g.input.plane(b, ic);
            for (std::int64_t oc = 0; oc < OC; ++oc) {
                const double* gp = grad_out.plane(b, oc);
                for (std::int64_t ky = 0; ky < KH; ++ky) {
                    const std::int64_t dy = ky * d - ph;  // iy = oy + dy
                    const std::int64_t iy0 = std::max<std::int64_t>(0, dy);
                    const std::int64_t iy1 = std::min<std::int64_t>(H, H + dy);
                    for (std::int64_t kx = 0; kx < KW; ++kx) {
                        const double wv = weights.at(oc, ic, ky, kx);
                        const std::int64_t dx = kx * d - pw;
                        const std::int64_t ix0 = std::max<std::int64_t>(0, dx);
                        const std::int64_t ix1 = std::min<std::int64_t>(W, W + dx);
                        for (std::int64_t iy = iy0; iy < iy1; ++iy) {
                            double* irow = gip + iy * W;
                            const double* grow = gp + (iy - dy) * W - dx;
                            for (std::int64_t ix = ix0; ix < ix1; ++ix) {
                                irow[ix] += wv * grow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    return g;
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> maxpool2d(const Tensor4& input) {
    if (input.h < 1 || input.w < 1) {
        throw ShapeError("maxpool2d: zero-sized spatial dims " + input.dims_str());
    }
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t OH = (H + 1) / 2, OW = (W + 1) / 2;

    Tensor4 out(N, C, OH, OW);
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* inp = input.plane(b, ch);
            double* outp = out.plane(b, ch);
            std::int64_t* amp = argmax.data() + (b * C + ch) * OH * OW;
            for (std::int64_t oy = 0; oy < OH; ++oy) {
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    // window position (0,0) always exists; out-of-bounds
                    // positions act as the most negative finite value
                    std::int64_t best = (2 * oy) * W + 2 * ox;
                    double bv = inp[best];
                    for (std::int64_t dy = 0; dy < 2; ++dy) {
                        for (std::int64_t dx = 0; dx < 2; ++dx) {
                            const std::int64_t y = 2 * oy + dy, x = 2 * ox + dx;
                            if (y >= H || x >= W) continue;
                            const std::int64_t idx = y * W + x;
                            if (inp[idx] > bv) {
                                bv = inp[idx];
                                best = idx;
                            }
                        }
                    }
                    outp[oy * OW + ox] = bv;
                    amp[oy * OW + ox] = (b * C + ch) * H * W + best;
                }
            }
        }
    }

    OpCache cache = make_cache(PoolCache{input.dims(), out.dims(), std::move(argmax)});
    return {std::move(out), std::move(cache)};
}

Tensor4 maxpool2d_backward(const OpCache& cache, const Tensor4& grad_out) {
    const PoolCache& pc = expect_cache<PoolCache>(cache, "maxpool2d");
    check_grad_dims(pc.out_dims, grad_out, "maxpool2d_backward");

    Tensor4 grad_in(pc.in_dims[0], pc.in_dims[1], pc.in_dims[2], pc.in_dims[3]);
    const std::int64_t total = grad_out.size();
    // windows are disjoint, so each input cell receives at most one write
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        grad_in.v[static_cast<std::size_t>(pc.argmax[static_cast<std::size_t>(i)])] +=
            grad_out.v[static_cast<std::size_t>(i)];
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// channel_pool
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> channel_pool(const Tensor4& input) {
    if (input.c < 1) {
        throw ShapeError("channel_pool: need at least one channel, got " + input.dims_str());
    }
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    Tensor4 out(N, 2, H, W);
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(N * H * W));

    const double inv_c = 1.0 / static_cast<double>(C);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t p = 0; p < H * W; ++p) {
            const double* base = input.v.data() + b * C * H * W + p;
            double mx = base[0];
            std::int32_t am = 0;
            double sum = base[0];
            for (std::int64_t ch = 1; ch < C; ++ch) {
                const double x = base[ch * H * W];
                sum += x;
                if (x > mx) {
                    mx = x;
                    am = static_cast<std::int32_t>(ch);
                }
            }
            out.plane(b, 0)[p] = mx;
            out.plane(b, 1)[p] = sum * inv_c;
            argmax[static_cast<std::size_t>(b * H * W + p)] = am;
        }
    }

    OpCache cache = make_cache(ChannelPoolCache{input.dims(), std::move(argmax)});
    return {std::move(out), std::move(cache)};
}

Tensor4 channel_pool_backward(const OpCache& cache, const Tensor4& grad_out) {
    const ChannelPoolCache& cc = expect_cache<ChannelPoolCache>(cache, "channel_pool");
    const std::array<std::int64_t, 4> want{cc.in_dims[0], 2, cc.in_dims[2], cc.in_dims[3]};
    check_grad_dims(want, grad_out, "channel_pool_backward");

    const std::int64_t N = cc.in_dims[0], C = cc.in_dims[1], H = cc.in_dims[2], W = cc.in_dims[3];
    Tensor4 grad_in(N, C, H, W);
    const double inv_c = 1.0 / static_cast<double>(C);

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* gmax = grad_out.plane(b, 0);
            const double* gmean = grad_out.plane(b, 1);
            const std::int32_t* am = cc.argmax_channel.data() + b * H * W;
            double* gip = grad_in.plane(b, ch);
            for (std::int64_t p = 0; p < H * W; ++p) {
                gip[p] = gmean[p] * inv_c + (am[p] == ch ? gmax[p] : 0.0);
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// resize_bilinear (align-corners false)
// ---------------------------------------------------------------------------

namespace {

struct Lerp {
    std::int64_t i0, i1;
    double w0, w1;
};

std::vector<Lerp> lerp_table(std::int64_t in_len, std::int64_t out_len) {
    std::vector<Lerp> t(static_cast<std::size_t>(out_len));
    const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
    for (std::int64_t o = 0; o < out_len; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double f = src - std::floor(src);
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        std::int64_t i1 = i0 + 1;
        i0 = std::clamp<std::int64_t>(i0, 0, in_len - 1);
        i1 = std::clamp<std::int64_t>(i1, 0, in_len - 1);
        t[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return t;
}

}  // namespace

std::pair<Tensor4, OpCache> resize_bilinear(const Tensor4& input, std::int64_t out_h,
                                            std::int64_t out_w) {
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("resize_bilinear: target dims must be >= 1, got " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    if (input.h < 1 || input.w < 1) {
        throw ShapeError("resize_bilinear: zero-sized input " + input.dims_str());
    }
    const std::int64_t N = input.n, C = input.c;
    const auto ty = lerp_table(input.h, out_h);
    const auto tx = lerp_table(input.w, out_w);

    Tensor4 out(N, C, out_h, out_w);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* inp = input.plane(b, ch);
            double* outp = out.plane(b, ch);
            const std::int64_t W = input.w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const Lerp& ly = ty[static_cast<std::size_t>(oy)];
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const Lerp& lx = tx[static_cast<std::size_t>(ox)];
                    outp[oy * out_w + ox] =
                        ly.w0 * (lx.w0 * inp[ly.i0 * W + lx.i0] + lx.w1 * inp[ly.i0 * W + lx.i1]) +
                        ly.w1 * (lx.w0 * inp[ly.i1 * W + lx.i0] + lx.w1 * inp[ly.i1 * W + lx.i1]);
                }
            }
        }
    }

    OpCache cache = make_cache(ResizeCache{input.dims(), out.dims()});
    return {std::move(out), std::move(cache)};
}

Tensor4 resize_bilinear_backward(const OpCache& cache, const Tensor4& grad_out) {
    const ResizeCache& rc = expect_cache<ResizeCache>(cache, "resize_bilinear");
    check_grad_dims(rc.out_dims, grad_out, "resize_bilinear_backward");

    const std::int64_t N = rc.in_dims[0], C = rc.in_dims[1];
    const std::int64_t H = rc.in_dims[2], W = rc.in_dims[3];
    const std::int64_t OH = rc.out_dims[2], OW = rc.out_dims[3];
    const auto ty = lerp_table(H, OH);
    const auto tx = lerp_table(W, OW);

    Tensor4 grad_in(N, C, H, W);
    // transpose scatter; planes are independent, scatter within a plane is
    // serial in row-major output order
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* gp = grad_out.plane(b, ch);
            double* gip = grad_in.plane(b, ch);
            for (std::int64_t oy = 0; oy < OH; ++oy) {
                const Lerp& ly = ty[static_cast<std::size_t>(oy)];
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    const Lerp& lx = tx[static_cast<std::size_t>(ox)];
                    const double g = gp[oy * OW + ox];
                    gip[ly.i0 * W + lx.i0] += ly.w0 * lx.w0 * g;
                    gip[ly.i0 * W + lx.i1] += ly.w0 * lx.w1 * g;
                    gip[ly.i1 * W + lx.i0] += ly.w1 * lx.w0 * g;
                    gip[ly.i1 * W + lx.i1] += ly.w1 * lx.w1 * g;
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// activation
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> activation(const Tensor4& input, ActKind kind) {
    Tensor4 out(input.n, input.c, input.h, input.w);
    const std::int64_t total = input.size();
    if (kind == ActKind::Relu) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            const double x = input.v[static_cast<std::size_t>(i)];
            out.v[static_cast<std::size_t>(i)] = x > 0.0 ? x : 0.0;
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            out.v[static_cast<std::size_t>(i)] = sigmoid(input.v[static_cast<std::size_t>(i)]);
        }
    }
    OpCache cache = make_cache(ActCache{kind, out});
    return {std::move(out), std::move(cache)};
}

Tensor4 activation_backward(const OpCache& cache, const Tensor4& grad_out) {
    const ActCache& ac = expect_cache<ActCache>(cache, "activation");
    check_grad_dims(ac.output.dims(), grad_out, "activation_backward");

    Tensor4 grad_in(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
    const std::int64_t total = grad_out.size();
    if (ac.kind == ActKind::Relu) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            grad_in.v[static_cast<std::size_t>(i)] =
                ac.output.v[static_cast<std::size_t>(i)] > 0.0
                    ? grad_out.v[static_cast<std::size_t>(i)]
                    : 0.0;
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            const double s = ac.output.v[static_cast<std::size_t>(i)];
            grad_in.v[static_cast<std::size_t>(i)] =
                grad_out.v[static_cast<std::size_t>(i)] * s * (1.0 - s);
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// spp_pool
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> spp_pool(const Tensor4& input) {
    if (input.h < 1 || input.w < 1) {
        throw ShapeError("spp_pool: spatial dims must be >= 1, got " + input.dims_str());
    }
    const std::int64_t N = input.n, C = input.c, H = input.h, W = input.w;
    const std::int64_t G = kSppGrid;

    Tensor4 out(N, C * G * G, 1, 1);
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* inp = input.plane(b, ch);
            double* outp = out.v.data() + (b * C + ch) * G * G;
            std::int64_t* amp = argmax.data() + (b * C + ch) * G * G;
            for (std::int64_t by = 0; by < G; ++by) {
                const std::int64_t y0 = by * H / G;
                const std::int64_t y1 = ((by + 1) * H + G - 1) / G;  // ceil
                for (std::int64_t bx = 0; bx < G; ++bx) {
                    const std::int64_t x0 = bx * W / G;
                    const std::int64_t x1 = ((bx + 1) * W + G - 1) / G;
                    std::int64_t best = y0 * W + x0;
                    double bv = inp[best];
                    for (std::int64_t y = y0; y < y1; ++y) {
                        for (std::int64_t x = x0; x < x1; ++x) {
                            if (inp[y * W + x] > bv) {
                                bv = inp[y * W + x];
                                best = y * W + x;
                            }
                        }
                    }
                    outp[by * G + bx] = bv;
                    amp[by * G + bx] = (b * C + ch) * H * W + best;
                }
            }
        }
    }

    OpCache cache = make_cache(SppCache{input.dims(), std::move(argmax)});
    return {std::move(out), std::move(cache)};
}

Tensor4 spp_pool_backward(const OpCache& cache, const Tensor4& grad_out) {
    const SppCache& sc = expect_cache<SppCache>(cache, "spp_pool");
    const std::int64_t G = kSppGrid;
    const std::array<std::int64_t, 4> want{sc.in_dims[0], sc.in_dims[1] * G * G, 1, 1};
    check_grad_dims(want, grad_out, "spp_pool_backward");

    const std::int64_t N = sc.in_dims[0], C = sc.in_dims[1];
    Tensor4 grad_in(N, C, sc.in_dims[2], sc.in_dims[3]);
    // bins may overlap when a dim is not a multiple of 16, so scatter stays
    // serial within each (batch, channel) plane
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const std::int64_t base = (b * C + ch) * G * G;
            for (std::int64_t k = 0; k < G * G; ++k) {
                grad_in.v[static_cast<std::size_t>(sc.argmax[static_cast<std::size_t>(base + k)])] +=
                    grad_out.v[static_cast<std::size_t>(base + k)];
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

std::pair<Vec, OpCache> dense(const Vec& input, const Mat& weights, const Vec& bias) {
    if (static_cast<std::int64_t>(input.size()) != weights.cols) {
        throw ShapeError("dense: input length " + std::to_string(input.size()) +
                         " does not match weight cols " + std::to_string(weights.cols));
    }
    if (static_cast<std::int64_t>(bias.size()) != weights.rows) {
        throw ShapeError("dense: bias length " + std::to_string(bias.size()) +
                         " does not match weight rows " + std::to_string(weights.rows));
    }
    Vec out(static_cast<std::size_t>(weights.rows));
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < weights.rows; ++r) {
        const double* wr = weights.a.data() + r * weights.cols;
        double acc = bias[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < weights.cols; ++c) {
            acc += wr[c] * input[static_cast<std::size_t>(c)];
        }
        out[static_cast<std::size_t>(r)] = acc;
    }
    OpCache cache = make_cache(DenseCache{input, weights});
    return {std::move(out), std::move(cache)};
}

DenseGrads dense_backward(const OpCache& cache, const Vec& grad_out) {
    const DenseCache& dc = expect_cache<DenseCache>(cache, "dense");
    if (static_cast<std::int64_t>(grad_out.size()) != dc.weights.rows) {
        throw ShapeError("dense_backward: grad length " + std::to_string(grad_out.size()) +
                         " does not match weight rows " + std::to_string(dc.weights.rows));
    }
    const std::int64_t R = dc.weights.rows, C = dc.weights.cols;
    DenseGrads g{Vec(static_cast<std::size_t>(C), 0.0), Mat(R, C), grad_out};
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < R; ++r) {
        const double gr = grad_out[static_cast<std::size_t>(r)];
        double* wrow = g.weights.a.data() + r * C;
        for (std::int64_t c = 0; c < C; ++c) {
            wrow[c] = gr * dc.input[static_cast<std::size_t>(c)];
        }
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < R; ++r) {
            acc += dc.weights.a[static_cast<std::size_t>(r * C + c)] *
                   grad_out[static_cast<std::size_t>(r)];
        }
        g.input[static_cast<std::size_t>(c)] = acc;
    }
    return g;
}

// ---------------------------------------------------------------------------
// semantic_refine
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> semantic_refine(const Tensor4& features, const Tensor4& seg_logit) {
    if (seg_logit.c != 1 || seg_logit.n != features.n || seg_logit.h != features.h ||
        seg_logit.w != features.w) {
        throw ShapeError("semantic_refine: logit map " + seg_logit.dims_str() +
                         " must be single-channel with the spatial dims of features " +
                         features.dims_str());
    }
    const std::int64_t N = features.n, C = features.c, H = features.h, W = features.w;

    Tensor4 gate(N, 1, H, W);
    const std::int64_t plane = H * W;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < N * plane; ++i) {
        gate.v[static_cast<std::size_t>(i)] = sigmoid(seg_logit.v[static_cast<std::size_t>(i)]);
    }

    Tensor4 out(N, C, H, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* fp = features.plane(b, ch);
            const double* gp = gate.plane(b, 0);
            double* op = out.plane(b, ch);
            for (std::int64_t p = 0; p < plane; ++p) op[p] = fp[p] * gp[p];
        }
    }

    OpCache cache = make_cache(RefineCache{features, std::move(gate)});
    return {std::move(out), std::move(cache)};
}

RefineGrads semantic_refine_backward(const OpCache& cache, const Tensor4& grad_out) {
    const RefineCache& rc = expect_cache<RefineCache>(cache, "semantic_refine");
    check_grad_dims(rc.features.dims(), grad_out, "semantic_refine_backward");

    const std::int64_t N = rc.features.n, C = rc.features.c;
    const std::int64_t plane = rc.features.h * rc.features.w;
    RefineGrads g{Tensor4(N, C, rc.features.h, rc.features.w),
                  Tensor4(N, 1, rc.features.h, rc.features.w)};

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const double* gp = grad_out.plane(b, ch);
            const double* sp = rc.gate.plane(b, 0);
            double* gf = g.features.plane(b, ch);
            for (std::int64_t p = 0; p < plane; ++p) gf[p] = gp[p] * sp[p];
        }
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < N; ++b) {
        const double* sp = rc.gate.plane(b, 0);
        double* gl = g.logit.plane(b, 0);
        for (std::int64_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (std::int64_t ch = 0; ch < C; ++ch) {
                acc += grad_out.plane(b, ch)[p] * rc.features.plane(b, ch)[p];
            }
            gl[p] = acc * sp[p] * (1.0 - sp[p]);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

std::pair<Tensor4, OpCache> concat_channels(const std::vector<const Tensor4*>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: no inputs");
    }
    const Tensor4& first = *parts.front();
    std::int64_t total_c = 0;
    std::vector<std::int64_t> channels;
    channels.reserve(parts.size());
    for (const Tensor4* p : parts) {
        if (p->n != first.n || p->h != first.h || p->w != first.w) {
            throw ShapeError("concat_channels: mismatched dims " + p->dims_str() + " vs " +
                             first.dims_str());
        }
        channels.push_back(p->c);
        total_c += p->c;
    }

    Tensor4 out(first.n, total_c, first.h, first.w);
    const std::int64_t plane = first.h * first.w;
    for (std::int64_t b = 0; b < first.n; ++b) {
        std::int64_t co = 0;
        for (const Tensor4* p : parts) {
            std::copy(p->plane(b, 0), p->plane(b, 0) + p->c * plane, out.plane(b, co));
            co += p->c;
        }
    }

    OpCache cache = make_cache(ConcatCache{std::move(channels), out.dims()});
    return {std::move(out), std::move(cache)};
}

std::vector<Tensor4> concat_channels_backward(const OpCache& cache, const Tensor4& grad_out) {
    const ConcatCache& cc = expect_cache<ConcatCache>(cache, "concat_channels");
    check_grad_dims(cc.out_dims, grad_out, "concat_channels_backward");

    std::vector<Tensor4> grads;
    grads.reserve(cc.part_channels.size());
    const std::int64_t plane = grad_out.h * grad_out.w;
    for (std::int64_t pc : cc.part_channels) {
        grads.emplace_back(grad_out.n, pc, grad_out.h, grad_out.w);
    }
    for (std::int64_t b = 0; b < grad_out.n; ++b) {
        std::int64_t co = 0;
        for (std::size_t k = 0; k < grads.size(); ++k) {
            std::copy(grad_out.plane(b, co), grad_out.plane(b, co) + grads[k].c * plane,
                      grads[k].plane(b, 0));
            co += grads[k].c;
        }
    }
    return grads;
}

}  // namespace ssrhef::ops
