// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "melsep/bandmap.hpp"
#include "melsep/model.hpp"
#include "melsep/spectral.hpp"

namespace melsep {

// Versioned binary container: magic, JSON header (model/window/mapping/stem),
// then a self-describing tensor table (name, dtype, shape, little-endian data).
constexpr char kCheckpointMagic[8] = {'M', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    ModelConfig model;
    WindowConfig window;
    BandMapping mapping;
    std::string stem = "stem";
    std::string dtype = "f64";  // f32 | f64
};

inline nlohmann::json header_to_json(const CheckpointHeader& h) {
    nlohmann::json j;
    j["model"] = {{"embed_dim", h.model.embed_dim},
                  {"heads", h.model.heads},
                  {"blocks", h.model.blocks},
                  {"ffn_multiplier", h.model.ffn_multiplier},
                  {"mask_multiplier", h.model.mask_multiplier},
                  {"norm", norm_name(h.model.norm)},
                  {"gated_mask", h.model.gated_mask},
                  {"channels", h.model.channels},
                  {"rope_base", h.model.rope_base}};
    j["window"] = {{"fft_size", h.window.fft_size},
                   {"hop", h.window.hop},
                   {"window", window_name(h.window.window)},
                   {"sample_rate", h.window.sample_rate},
                   {"drop_nyquist", h.window.drop_nyquist}};
    j["mapping"] = mapping_to_json(h.mapping);
    j["stem"] = h.stem;
    j["dtype"] = h.dtype;
    return j;
}

inline CheckpointHeader header_from_json(const nlohmann::json& j) {
    CheckpointHeader h;
    const auto& m = j.at("model");
    h.model.embed_dim = m.at("embed_dim");
    h.model.heads = m.at("heads");
    h.model.blocks = m.at("blocks");
    h.model.ffn_multiplier = m.at("ffn_multiplier");
    h.model.mask_multiplier = m.at("mask_multiplier");
    h.model.norm = norm_from_name(m.at("norm"));
    h.model.gated_mask = m.at("gated_mask");
    h.model.channels = m.at("channels");
    h.model.rope_base = m.at("rope_base");
    const auto& w = j.at("window");
    h.window.fft_size = w.at("fft_size");
    h.window.hop = w.at("hop");
    h.window.window = window_from_name(w.at("window"));
    h.window.sample_rate = w.at("sample_rate");
    h.window.drop_nyquist = w.at("drop_nyquist");
    h.mapping = mapping_from_json(j.at("mapping"));
    h.stem = j.at("stem");
    h.dtype = j.at("dtype");
    return h;
}

template <class S>
void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const Params<S>& params) {
    CheckpointHeader h = header;
    h.dtype = sizeof(S) == 4 ? "f32" : "f64";
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 8);
    detail::wr_u32(os, kCheckpointVersion);
    const std::string hdr = header_to_json(h).dump();
    detail::wr_u32(os, static_cast<uint32_t>(hdr.size()));
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));

    uint32_t count = 0;
    params.for_each_tensor([&](const Tensor<S>&) { ++count; });
    detail::wr_u32(os, count);
    params.for_each_tensor([&](const Tensor<S>& t) {
        detail::wr_u32(os, static_cast<uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::wr_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::wr_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.v.data()),
                 static_cast<std::streamsize>(t.v.size() * sizeof(S)));
    });
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw InvalidInput("not a checkpoint file: " + path);
    if (detail::rd_u32(is) != kCheckpointVersion)
        throw InvalidInput("unsupported checkpoint version");
    const uint32_t hlen = detail::rd_u32(is);
    std::string hdr(hlen, '\0');
    is.read(hdr.data(), hlen);
    if (!is) throw InvalidInput("truncated checkpoint header");
    return header_from_json(nlohmann::json::parse(hdr));
}

template <class S>
Params<S> load_checkpoint(const std::string& path, CheckpointHeader* out_header) {
    auto header = read_checkpoint_header(path);
    const std::string want = sizeof(S) == 4 ? "f32" : "f64";
    if (header.dtype != want)
        throw InvalidInput("checkpoint dtype is " + header.dtype + ", expected " +
                           want);

    std::ifstream is(path, std::ios::binary);
    is.seekg(8 + 4, std::ios::beg);
    const uint32_t hlen = detail::rd_u32(is);
    is.seekg(hlen, std::ios::cur);

    auto params = Params<S>::build(header.model, header.mapping);
    const uint32_t count = detail::rd_u32(is);
    uint32_t expected = 0;
    params.for_each_tensor([&](Tensor<S>&) { ++expected; });
    if (count != expected) throw InvalidInput("checkpoint tensor count mismatch");

    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = detail::rd_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const uint32_t ndim = detail::rd_u32(is);
        std::vector<int> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(detail::rd_u32(is));
            numel *= static_cast<size_t>(shape[d]);
        }
        bool found = false;
        params.for_each_tensor([&](Tensor<S>& t) {
            if (t.name != name || found) return;
            if (t.shape != shape)
                throw InvalidInput("checkpoint shape mismatch for " + name);
            is.read(reinterpret_cast<char*>(t.v.data()),
                    static_cast<std::streamsize>(numel * sizeof(S)));
            found = true;
        });
        if (!found) throw InvalidInput("unexpected checkpoint tensor " + name);
    }
    if (!is) throw InvalidInput("truncated checkpoint data");
    if (out_header) *out_header = header;
    return params;
}

}  // namespace melsep
