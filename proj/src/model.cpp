#include "ssrhef/model.hpp"

#include <cmath>
#include <random>

namespace ssrhef::model {

namespace {

Tensor4 he_conv(std::mt19937_64& rng, std::int64_t oc, std::int64_t ic, std::int64_t kh,
                std::int64_t kw) {
    Tensor4 w(oc, ic, kh, kw);
    const double std = std::sqrt(2.0 / static_cast<double>(ic * kh * kw));
    for (double& x : w.v) x = std * gaussian(rng);
    return w;
}

Mat he_mat(std::mt19937_64& rng, std::int64_t rows, std::int64_t cols) {
    Mat w(rows, cols);
    const double std = std::sqrt(2.0 / static_cast<double>(cols));
    for (double& x : w.a) x = std * gaussian(rng);
    return w;
}

void add_inplace(Tensor4& dst, const Tensor4& src) {
    if (!dst.same_dims(src)) {
        throw ShapeError("gradient accumulation dims mismatch: " + dst.dims_str() + " vs " +
                         src.dims_str());
    }
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

Tensor4 vec_as_tensor(const Vec& v) {
    Tensor4 t(1, static_cast<std::int64_t>(v.size()), 1, 1);
    t.v = v;
    return t;
}

Vec tensor_as_vec(const Tensor4& t) { return t.v; }

struct Widths {
    std::int64_t c1, c2, c3, fuse, hidden;
};

Widths widths_of(const ModelConfig& cfg) {
    const std::int64_t c = cfg.base_channels;
    return Widths{4 * c, 6 * c, 8 * c, 4 * c, 64};
}

}  // namespace

std::span<double> param_span(ParamValue& v) {
    if (auto* t = std::get_if<Tensor4>(&v)) return {t->v.data(), t->v.size()};
    if (auto* m = std::get_if<Mat>(&v)) return {m->a.data(), m->a.size()};
    auto& vec = std::get<Vec>(v);
    return {vec.data(), vec.size()};
}

std::span<const double> param_span(const ParamValue& v) {
    if (const auto* t = std::get_if<Tensor4>(&v)) return {t->v.data(), t->v.size()};
    if (const auto* m = std::get_if<Mat>(&v)) return {m->a.data(), m->a.size()};
    const auto& vec = std::get<Vec>(v);
    return {vec.data(), vec.size()};
}

std::int64_t param_size(const ParamValue& v) {
    return static_cast<std::int64_t>(param_span(v).size());
}

void ModelParams::add(const std::string& name, ParamValue v) {
    if (has(name)) {
        throw DataError("duplicate parameter name " + name);
    }
    names.push_back(name);
    values.emplace(name, std::move(v));
}

ParamValue& ModelParams::at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) {
        throw DataError("unknown parameter " + name);
    }
    return it->second;
}

const ParamValue& ModelParams::at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) {
        throw DataError("unknown parameter " + name);
    }
    return it->second;
}

Tensor4& ModelParams::t4(const std::string& name) {
    auto* p = std::get_if<Tensor4>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not rank 4");
    return *p;
}
const Tensor4& ModelParams::t4(const std::string& name) const {
    const auto* p = std::get_if<Tensor4>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not rank 4");
    return *p;
}
Mat& ModelParams::mat(const std::string& name) {
    auto* p = std::get_if<Mat>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not a matrix");
    return *p;
}
const Mat& ModelParams::mat(const std::string& name) const {
    const auto* p = std::get_if<Mat>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not a matrix");
    return *p;
}
Vec& ModelParams::vec(const std::string& name) {
    auto* p = std::get_if<Vec>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not a vector");
    return *p;
}
const Vec& ModelParams::vec(const std::string& name) const {
    const auto* p = std::get_if<Vec>(&at(name));
    if (p == nullptr) throw DataError("parameter " + name + " is not a vector");
    return *p;
}

std::int64_t ModelParams::total_scalars() const {
    std::int64_t n = 0;
    for (const auto& name : names) n += param_size(at(name));
    return n;
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z;
    for (const auto& name : p.names) {
        const ParamValue& v = p.at(name);
        if (const auto* t = std::get_if<Tensor4>(&v)) {
            z.add(name, Tensor4(t->n, t->c, t->h, t->w));
        } else if (const auto* m = std::get_if<Mat>(&v)) {
            z.add(name, Mat(m->rows, m->cols));
        } else {
            z.add(name, Vec(std::get<Vec>(v).size(), 0.0));
        }
    }
    return z;
}

std::int64_t param_count(const ModelParams& p) { return p.total_scalars(); }

std::int64_t conv_param_count(const ModelParams& p) {
    std::int64_t n = 0;
    for (const auto& name : p.names) {
        if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0 &&
            std::holds_alternative<Tensor4>(p.at(name))) {
            n += param_size(p.at(name));
            const std::string bias = name.substr(0, name.size() - 2) + ".b";
            if (p.has(bias)) n += param_size(p.at(bias));
        }
    }
    return n;
}

void Trace::push(ops::OpCache c) {
    tags.push_back(c.tag);
    caches.push_back(std::move(c));
}

ops::OpCache Trace::pop() {
    if (caches.empty()) {
        throw CacheMismatchError("trace exhausted: backward popped more ops than forward pushed");
    }
    if (caches.back().tag != tags.back()) {
        throw CacheMismatchError("cache tag mismatch in trace: recorded " +
                                 std::to_string(tags.back()) + ", found " +
                                 std::to_string(caches.back().tag) + " (" +
                                 ops::cache_kind_name(caches.back()) + ")");
    }
    ops::OpCache c = std::move(caches.back());
    caches.pop_back();
    tags.pop_back();
    return c;
}

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.base_channels < 1 || cfg.num_classes < 2) {
        throw DataError("invalid model config: base_channels " +
                        std::to_string(cfg.base_channels) + ", num_classes " +
                        std::to_string(cfg.num_classes));
    }
    const Widths w = widths_of(cfg);
    const std::int64_t c = cfg.base_channels;
    std::mt19937_64 rng(seed);

    ModelParams p;
    for (int k = 0; k < 4; ++k) {
        const std::string base = "stem." + std::to_string(k);
        p.add(base + ".w", he_conv(rng, c, 1, 3, 3));
        p.add(base + ".b", Vec(static_cast<std::size_t>(c), 0.0));
    }
    p.add("stage1.w", he_conv(rng, w.c1, w.c1, 3, 3));
    p.add("stage1.b", Vec(static_cast<std::size_t>(w.c1), 0.0));
    p.add("stage2.w", he_conv(rng, w.c2, w.c1, 3, 3));
    p.add("stage2.b", Vec(static_cast<std::size_t>(w.c2), 0.0));
    p.add("stage3.w", he_conv(rng, w.c3, w.c2, 3, 3));
    p.add("stage3.b", Vec(static_cast<std::size_t>(w.c3), 0.0));

    p.add("seg1.w", he_conv(rng, 1, w.c1, 1, 1));
    p.add("seg1.b", Vec(1, 0.0));
    p.add("seg2.w", he_conv(rng, 1, w.c2, 1, 1));
    p.add("seg2.b", Vec(1, 0.0));
    p.add("seg3.w", he_conv(rng, 1, w.c3, 1, 1));
    p.add("seg3.b", Vec(1, 0.0));

    p.add("fuse.w", he_conv(rng, w.fuse, w.c1 + w.c2 + w.c3, 1, 1));
    p.add("fuse.b", Vec(static_cast<std::size_t>(w.fuse), 0.0));

    p.add("cls1.w", he_mat(rng, w.hidden, w.fuse * ops::kSppGrid * ops::kSppGrid));
    p.add("cls1.b", Vec(static_cast<std::size_t>(w.hidden), 0.0));
    p.add("cls2.w", he_mat(rng, cfg.num_classes, w.hidden));
    p.add("cls2.b", Vec(static_cast<std::size_t>(cfg.num_classes), 0.0));

    p.add("fel.conv.w", he_conv(rng, w.fuse, w.fuse, 3, 3));
    p.add("fel.conv.b", Vec(static_cast<std::size_t>(w.fuse), 0.0));
    p.add("fel.att.w", he_conv(rng, 1, 2, 7, 7));
    p.add("fel.att.b", Vec(1, 0.0));

    p.add("den1.w", he_conv(rng, w.fuse, w.fuse, 3, 3));
    p.add("den1.b", Vec(static_cast<std::size_t>(w.fuse), 0.0));
    p.add("den2.w", he_conv(rng, w.fuse, w.fuse, 3, 3));
    p.add("den2.b", Vec(static_cast<std::size_t>(w.fuse), 0.0));
    p.add("den3.w", he_conv(rng, 1, w.fuse, 1, 1));
    p.add("den3.b", Vec(1, 0.0));
    return p;
}

Tensor4 fel_forward(const Tensor4& f, const Tensor4& conv_w, const Vec& conv_b,
                    const Tensor4& att_w, const Vec& att_b, Trace& trace) {
    auto [pre, c_conv] = ops::conv2d(f, conv_w, conv_b, 1);
    trace.push(std::move(c_conv));
    auto [a, c_act] = ops::activation(pre, ops::ActKind::Relu);
    trace.push(std::move(c_act));
    auto [m, c_pool] = ops::channel_pool(a);
    trace.push(std::move(c_pool));
    auto [att, c_att] = ops::conv2d(m, att_w, att_b, 1);
    trace.push(std::move(c_att));
    auto [out, c_ref] = ops::semantic_refine(a, att);
    trace.push(std::move(c_ref));
    return out;
}

FelGrads fel_backward(Trace& trace, const Tensor4& grad_out) {
    const ops::OpCache c_ref = trace.pop();
    ops::RefineGrads rg = ops::semantic_refine_backward(c_ref, grad_out);

    const ops::OpCache c_att = trace.pop();
    ops::ConvGrads ag = ops::conv2d_backward(c_att, rg.logit);

    const ops::OpCache c_pool = trace.pop();
    Tensor4 d_a2 = ops::channel_pool_backward(c_pool, ag.input);
    add_inplace(rg.features, d_a2);

    const ops::OpCache c_act = trace.pop();
    Tensor4 d_pre = ops::activation_backward(c_act, rg.features);

    const ops::OpCache c_conv = trace.pop();
    ops::ConvGrads cg = ops::conv2d_backward(c_conv, d_pre);

    return FelGrads{std::move(cg.input), std::move(cg.weights), std::move(cg.bias),
                    std::move(ag.weights), std::move(ag.bias)};
}

ModelOutputs forward(const ModelConfig& cfg, const ModelParams& p, const Tensor4& image) {
    if (image.n != 1 || image.c != 1) {
        throw ShapeError("forward expects a (1,1,h,w) image, got " + image.dims_str());
    }
    if (image.h < 8 || image.w < 8 || image.h % 8 != 0 || image.w % 8 != 0) {
        throw ShapeError("image dims must be >= 8 and divisible by 8, got " + image.dims_str());
    }
    ModelOutputs out;
    Trace& tr = out.trace;
    const std::int64_t h8 = image.h / 8, w8 = image.w / 8;

    // dilated stem, four branches on the raw image
    std::array<Tensor4, 4> stem;
    for (int k = 0; k < 4; ++k) {
        const std::string base = "stem." + std::to_string(k);
        auto [s, c] = ops::conv2d(image, p.t4(base + ".w"), p.vec(base + ".b"),
                                  cfg.dilations[static_cast<std::size_t>(k)]);
        stem[static_cast<std::size_t>(k)] = std::move(s);
        tr.push(std::move(c));
    }
    auto [cat0, c_cat0] = ops::concat_channels(
        {&stem[0], &stem[1], &stem[2], &stem[3]});
    tr.push(std::move(c_cat0));
    auto [a0, c_a0] = ops::activation(cat0, ops::ActKind::Relu);
    tr.push(std::move(c_a0));

    // three conv/relu/pool stages
    auto stage = [&](const Tensor4& in, const std::string& base) {
        auto [pre, c1] = ops::conv2d(in, p.t4(base + ".w"), p.vec(base + ".b"), 1);
        tr.push(std::move(c1));
        auto [act, c2] = ops::activation(pre, ops::ActKind::Relu);
        tr.push(std::move(c2));
        auto [pooled, c3] = ops::maxpool2d(act);
        tr.push(std::move(c3));
        return pooled;
    };
    const Tensor4 f1 = stage(a0, "stage1");
    const Tensor4 f2 = stage(f1, "stage2");
    const Tensor4 f3 = stage(f2, "stage3");

    // per-scale segmentation logits
    auto seg_head = [&](const Tensor4& f, const std::string& base) {
        auto [logit, c] = ops::conv2d(f, p.t4(base + ".w"), p.vec(base + ".b"), 1);
        tr.push(std::move(c));
        return logit;
    };
    out.seg_logits[0] = seg_head(f1, "seg1");
    out.seg_logits[1] = seg_head(f2, "seg2");
    out.seg_logits[2] = seg_head(f3, "seg3");

    // gate each scale by its own sigmoid map
    auto refine = [&](const Tensor4& f, const Tensor4& logit) {
        auto [g, c] = ops::semantic_refine(f, logit);
        tr.push(std::move(c));
        return g;
    };
    const Tensor4 g1 = refine(f1, out.seg_logits[0]);
    const Tensor4 g2 = refine(f2, out.seg_logits[1]);
    const Tensor4 g3 = refine(f3, out.seg_logits[2]);

    // fuse at stride 8
    auto [r1, c_r1] = ops::resize_bilinear(g1, h8, w8);
    tr.push(std::move(c_r1));
    auto [r2, c_r2] = ops::resize_bilinear(g2, h8, w8);
    tr.push(std::move(c_r2));
    auto [cat, c_cat] = ops::concat_channels({&r1, &r2, &g3});
    tr.push(std::move(c_cat));
    auto [msrf, c_fuse] = ops::conv2d(cat, p.t4("fuse.w"), p.vec("fuse.b"), 1);
    tr.push(std::move(c_fuse));

    // classification branch
    auto [spp, c_spp] = ops::spp_pool(msrf);
    tr.push(std::move(c_spp));
    auto [hidden, c_d1] = ops::dense(tensor_as_vec(spp), p.mat("cls1.w"), p.vec("cls1.b"));
    tr.push(std::move(c_d1));
    auto [hidden_act, c_hact] = ops::activation(vec_as_tensor(hidden), ops::ActKind::Relu);
    tr.push(std::move(c_hact));
    auto [logits, c_d2] = ops::dense(tensor_as_vec(hidden_act), p.mat("cls2.w"), p.vec("cls2.b"));
    tr.push(std::move(c_d2));
    out.class_logits = std::move(logits);

    // enhancement then density regression
    const Tensor4 enhanced = fel_forward(msrf, p.t4("fel.conv.w"), p.vec("fel.conv.b"),
                                         p.t4("fel.att.w"), p.vec("fel.att.b"), tr);
    auto den_stage = [&](const Tensor4& in, const std::string& base) {
        auto [pre, c1] = ops::conv2d(in, p.t4(base + ".w"), p.vec(base + ".b"), 1);
        tr.push(std::move(c1));
        auto [act, c2] = ops::activation(pre, ops::ActKind::Relu);
        tr.push(std::move(c2));
        return act;
    };
    const Tensor4 d1 = den_stage(enhanced, "den1");
    const Tensor4 d2 = den_stage(d1, "den2");
    auto [d3, c_d3] = ops::conv2d(d2, p.t4("den3.w"), p.vec("den3.b"), 1);
    tr.push(std::move(c_d3));
    auto [density, c_final] = ops::activation(d3, ops::ActKind::Relu);
    tr.push(std::move(c_final));
    out.density = std::move(density);
    return out;
}

ModelParams backward(const ModelConfig& cfg, const ModelParams& p, ModelOutputs& outputs,
                     const LossGrads& grads) {
    (void)cfg;
    Trace& tr = outputs.trace;
    ModelParams g = zeros_like(p);

    auto set_conv = [&g](const std::string& base, ops::ConvGrads& cg) {
        g.t4(base + ".w") = std::move(cg.weights);
        g.vec(base + ".b") = std::move(cg.bias);
    };

    // density head
    Tensor4 d = ops::activation_backward(tr.pop(), grads.d_density);
    ops::ConvGrads cg3 = ops::conv2d_backward(tr.pop(), d);
    set_conv("den3", cg3);
    d = ops::activation_backward(tr.pop(), cg3.input);
    ops::ConvGrads cg2 = ops::conv2d_backward(tr.pop(), d);
    set_conv("den2", cg2);
    d = ops::activation_backward(tr.pop(), cg2.input);
    ops::ConvGrads cg1 = ops::conv2d_backward(tr.pop(), d);
    set_conv("den1", cg1);

    // enhancement layer; its input gradient starts the MSRF accumulator
    FelGrads fel = fel_backward(tr, cg1.input);
    g.t4("fel.conv.w") = std::move(fel.conv_w);
    g.vec("fel.conv.b") = std::move(fel.conv_b);
    g.t4("fel.att.w") = std::move(fel.att_w);
    g.vec("fel.att.b") = std::move(fel.att_b);
    Tensor4 d_msrf = std::move(fel.input);

    // classification branch
    ops::DenseGrads dg2 = ops::dense_backward(tr.pop(), grads.d_class_logits);
    g.mat("cls2.w") = std::move(dg2.weights);
    g.vec("cls2.b") = std::move(dg2.bias);
    Tensor4 d_hidden = ops::activation_backward(tr.pop(), vec_as_tensor(dg2.input));
    ops::DenseGrads dg1 = ops::dense_backward(tr.pop(), tensor_as_vec(d_hidden));
    g.mat("cls1.w") = std::move(dg1.weights);
    g.vec("cls1.b") = std::move(dg1.bias);
    Tensor4 d_spp(1, static_cast<std::int64_t>(dg1.input.size()), 1, 1);
    d_spp.v = std::move(dg1.input);
    add_inplace(d_msrf, ops::spp_pool_backward(tr.pop(), d_spp));

    // fusion
    ops::ConvGrads fuse_g = ops::conv2d_backward(tr.pop(), d_msrf);
    set_conv("fuse", fuse_g);
    std::vector<Tensor4> cat_g = ops::concat_channels_backward(tr.pop(), fuse_g.input);
    Tensor4 d_g2 = ops::resize_bilinear_backward(tr.pop(), cat_g[1]);
    Tensor4 d_g1 = ops::resize_bilinear_backward(tr.pop(), cat_g[0]);

    // gates: feature grads accumulate onto the stage features, logit grads
    // join the external segmentation loss grads
    ops::RefineGrads rg3 = ops::semantic_refine_backward(tr.pop(), cat_g[2]);
    ops::RefineGrads rg2 = ops::semantic_refine_backward(tr.pop(), d_g2);
    ops::RefineGrads rg1 = ops::semantic_refine_backward(tr.pop(), d_g1);
    Tensor4 d_f3 = std::move(rg3.features);
    Tensor4 d_f2 = std::move(rg2.features);
    Tensor4 d_f1 = std::move(rg1.features);
    add_inplace(rg3.logit, grads.d_seg[2]);
    add_inplace(rg2.logit, grads.d_seg[1]);
    add_inplace(rg1.logit, grads.d_seg[0]);

    ops::ConvGrads sg3 = ops::conv2d_backward(tr.pop(), rg3.logit);
    set_conv("seg3", sg3);
    add_inplace(d_f3, sg3.input);
    ops::ConvGrads sg2 = ops::conv2d_backward(tr.pop(), rg2.logit);
    set_conv("seg2", sg2);
    add_inplace(d_f2, sg2.input);
    ops::ConvGrads sg1 = ops::conv2d_backward(tr.pop(), rg1.logit);
    set_conv("seg1", sg1);
    add_inplace(d_f1, sg1.input);

    // stages in reverse; each stage's input grad accumulates onto the
    // previous stage's feature grad
    auto stage_back = [&](Tensor4& d_out, const std::string& base) {
        Tensor4 d_act = ops::maxpool2d_backward(tr.pop(), d_out);
        Tensor4 d_pre = ops::activation_backward(tr.pop(), d_act);
        ops::ConvGrads cg = ops::conv2d_backward(tr.pop(), d_pre);
        set_conv(base, cg);
        return std::move(cg.input);
    };
    add_inplace(d_f2, stage_back(d_f3, "stage3"));
    add_inplace(d_f1, stage_back(d_f2, "stage2"));
    Tensor4 d_a0 = stage_back(d_f1, "stage1");

    // stem
    Tensor4 d_cat0 = ops::activation_backward(tr.pop(), d_a0);
    std::vector<Tensor4> stem_g = ops::concat_channels_backward(tr.pop(), d_cat0);
    for (int k = 3; k >= 0; --k) {
        ops::ConvGrads cg = ops::conv2d_backward(tr.pop(), stem_g[static_cast<std::size_t>(k)]);
        const std::string base = "stem." + std::to_string(k);
        g.t4(base + ".w") = std::move(cg.weights);
        g.vec(base + ".b") = std::move(cg.bias);
        // the image receives no gradient
    }
    if (tr.depth() != 0) {
        throw CacheMismatchError("trace not exhausted after backward: " +
                                 std::to_string(tr.depth()) + " caches remain");
    }
    return g;
}

double predict_count(const Tensor4& density) {
    double s = 0.0;
    for (double x : density.v) s += x;
    return s;
}

}  // namespace ssrhef::model
