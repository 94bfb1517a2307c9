#include <cstring>
#include <fstream>

#include "ssrhef/detail/endian.hpp"
#include "ssrhef/model.hpp"

namespace ssrhef::model {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', 'H', 'E', 'F', '0', '1'};

using detail::get_f64;
using detail::get_u32;
using detail::put_f64;
using detail::put_u32;

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("cannot open checkpoint for writing: " + path);
    }
    os.write(kMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(params.names.size()));
    for (const auto& name : params.names) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const ParamValue& v = params.at(name);
        if (const auto* t = std::get_if<Tensor4>(&v)) {
            put_u32(os, 4);
            put_u32(os, static_cast<std::uint32_t>(t->n));
            put_u32(os, static_cast<std::uint32_t>(t->c));
            put_u32(os, static_cast<std::uint32_t>(t->h));
            put_u32(os, static_cast<std::uint32_t>(t->w));
        } else if (const auto* m = std::get_if<Mat>(&v)) {
            put_u32(os, 2);
            put_u32(os, static_cast<std::uint32_t>(m->rows));
            put_u32(os, static_cast<std::uint32_t>(m->cols));
        } else {
            put_u32(os, 1);
            put_u32(os, static_cast<std::uint32_t>(std::get<Vec>(v).size()));
        }
        for (double x : param_span(v)) put_f64(os, x);
    }
    if (!os) {
        throw DataError("write failure on checkpoint: " + path);
    }
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open checkpoint: " + path);
    }
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("bad checkpoint magic in " + path);
    }
    const std::uint32_t count = get_u32(is, "entry count");
    ModelParams p;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = get_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw DataError("checkpoint truncated while reading a name in " + path);
        }
        const std::uint32_t rank = get_u32(is, "rank of " + name);
        ParamValue v;
        if (rank == 4) {
            const auto n = get_u32(is, "dims"), c = get_u32(is, "dims");
            const auto h = get_u32(is, "dims"), w = get_u32(is, "dims");
            v = Tensor4(n, c, h, w);
        } else if (rank == 2) {
            const auto r = get_u32(is, "dims"), c = get_u32(is, "dims");
            v = Mat(r, c);
        } else if (rank == 1) {
            v = Vec(get_u32(is, "dims"), 0.0);
        } else {
            throw DataError("unsupported rank " + std::to_string(rank) + " for " + name);
        }
        for (double& x : param_span(v)) x = get_f64(is, name);
        if (!all_finite(param_span(v))) {
            throw DataError("non-finite values in checkpoint entry " + name);
        }
        p.add(name, std::move(v));
    }
    return p;
}

}  // namespace ssrhef::model
