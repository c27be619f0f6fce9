// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "melsep/bandmap.hpp"
#include "melsep/common.hpp"
#include "melsep/nn.hpp"
#include "melsep/rope.hpp"
#include "melsep/spectral.hpp"

namespace melsep {

struct ModelConfig {
    int embed_dim = 64;
    int heads = 4;
    int blocks = 2;
    int ffn_multiplier = 4;
    int mask_multiplier = 4;
    NormKind norm = NormKind::rmsnorm;
    bool gated_mask = true;
    int channels = 2;
    double rope_base = 10000.0;

    int head_dim() const { return embed_dim / heads; }
    int ffn_dim() const { return embed_dim * ffn_multiplier; }
    int mask_hidden() const { return embed_dim * mask_multiplier; }

    void validate() const {
        if (embed_dim < 2 || heads < 1 || embed_dim % (2 * heads) != 0)
            throw InvalidInput("embed_dim must be divisible by 2*heads");
        if (blocks < 1) throw InvalidInput("need at least one block");
        if (ffn_multiplier < 1 || mask_multiplier < 1)
            throw InvalidInput("multipliers must be positive");
        if (channels < 1) throw InvalidInput("need at least one channel");
    }
};

// Per-band feature width: real+imag per bin per channel.
inline int band_feature_width(const BandMapping& m, int band, int channels) {
    return 2 * m.band_width(band) * channels;
}

template <class S>
struct BandEmbeddings {
    int n_bands = 0, frames = 0, dim = 0;
    std::vector<S> v;  // [band][frame][dim]

    S* at(int b, int t) {
        return v.data() + (static_cast<size_t>(b) * frames + t) * dim;
    }
    const S* at(int b, int t) const {
        return v.data() + (static_cast<size_t>(b) * frames + t) * dim;
    }

    static BandEmbeddings zeros(int n_bands, int frames, int dim) {
        BandEmbeddings e;
        e.n_bands = n_bands;
        e.frames = frames;
        e.dim = dim;
        e.v.assign(static_cast<size_t>(n_bands) * frames * dim, S(0));
        return e;
    }
};

template <class S>
struct ComplexMask {
    int bins = 0, frames = 0, channels = 0;
    std::vector<S> re, im;  // [channel][frame][bin]

    size_t idx(int c, int t, int f) const {
        return (static_cast<size_t>(c) * frames + t) * bins + f;
    }

    static ComplexMask zeros(int bins, int frames, int channels) {
        ComplexMask m;
        m.bins = bins;
        m.frames = frames;
        m.channels = channels;
        m.re.assign(static_cast<size_t>(bins) * frames * channels, S(0));
        m.im.assign(static_cast<size_t>(bins) * frames * channels, S(0));
        return m;
    }
};

template <class S>
struct BandProjParams {
    Tensor<S> norm_g, norm_b, w, b;
};

template <class S>
struct AttnParams {
    Tensor<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<S> ln2_g, ln2_b, wf1, bf1, wf2, bf2;
};

template <class S>
struct MaskParams {
    Tensor<S> norm_g, norm_b, w1, b1, w2, b2;
};

enum class InitMode { training, random };

template <class S>
struct Params {
    ModelConfig cfg;
    std::vector<int> band_width;
    std::vector<BandProjParams<S>> proj;
    std::vector<std::array<AttnParams<S>, 2>> blocks;  // [layer][time|band]
    std::vector<MaskParams<S>> mask;

    static Params build(const ModelConfig& cfg, const BandMapping& mapping) {
        cfg.validate();
        mapping.validate();
        Params p;
        p.cfg = cfg;
        const int D = cfg.embed_dim, Dm = cfg.mask_hidden(), Df = cfg.ffn_dim();
        const int B = mapping.n_bands();
        const bool has_norm = cfg.norm != NormKind::none;
        const bool has_beta = cfg.norm == NormKind::layernorm;
        auto norm_pair = [&](const std::string& prefix, int dim, Tensor<S>& g,
                             Tensor<S>& bt) {
            if (has_norm) g = Tensor<S>::make(prefix + "norm_g", {dim});
            if (has_beta) bt = Tensor<S>::make(prefix + "norm_b", {dim});
        };
        for (int b = 0; b < B; ++b) {
            p.band_width.push_back(mapping.band_width(b));
            const int in = band_feature_width(mapping, b, cfg.channels);
            BandProjParams<S> bp;
            const std::string pre = "proj." + std::to_string(b) + ".";
            norm_pair(pre, in, bp.norm_g, bp.norm_b);
            bp.w = Tensor<S>::make(pre + "w", {D, in});
            bp.b = Tensor<S>::make(pre + "b", {D});
            p.proj.push_back(std::move(bp));
        }
        for (int l = 0; l < cfg.blocks; ++l) {
            std::array<AttnParams<S>, 2> pair;
            for (int a = 0; a < 2; ++a) {
                const std::string pre = "block." + std::to_string(l) + "." +
                                        (a == 0 ? "time." : "band.");
                AttnParams<S>& ap = pair[a];
                norm_pair(pre + "ln1_", D, ap.ln1_g, ap.ln1_b);
                ap.wq = Tensor<S>::make(pre + "wq", {D, D});
                ap.bq = Tensor<S>::make(pre + "bq", {D});
                ap.wk = Tensor<S>::make(pre + "wk", {D, D});
                ap.bk = Tensor<S>::make(pre + "bk", {D});
                ap.wv = Tensor<S>::make(pre + "wv", {D, D});
                ap.bv = Tensor<S>::make(pre + "bv", {D});
                ap.wo = Tensor<S>::make(pre + "wo", {D, D});
                ap.bo = Tensor<S>::make(pre + "bo", {D});
                norm_pair(pre + "ln2_", D, ap.ln2_g, ap.ln2_b);
                ap.wf1 = Tensor<S>::make(pre + "wf1", {Df, D});
                ap.bf1 = Tensor<S>::make(pre + "bf1", {Df});
                ap.wf2 = Tensor<S>::make(pre + "wf2", {D, Df});
                ap.bf2 = Tensor<S>::make(pre + "bf2", {D});
            }
            p.blocks.push_back(std::move(pair));
        }
        for (int b = 0; b < B; ++b) {
            const int out = band_feature_width(mapping, b, cfg.channels);
            const int wide = cfg.gated_mask ? 2 * out : out;
            MaskParams<S> mp;
            const std::string pre = "mask." + std::to_string(b) + ".";
            norm_pair(pre, D, mp.norm_g, mp.norm_b);
            mp.w1 = Tensor<S>::make(pre + "w1", {Dm, D});
            mp.b1 = Tensor<S>::make(pre + "b1", {Dm});
            mp.w2 = Tensor<S>::make(pre + "w2", {wide, Dm});
            mp.b2 = Tensor<S>::make(pre + "b2", {wide});
            p.mask.push_back(std::move(mp));
        }
        return p;
    }

    template <class F>
    void for_each_tensor(F&& f) {
        auto visit = [&](Tensor<S>& t) {
            if (!t.empty()) f(t);
        };
        for (auto& bp : proj) {
            visit(bp.norm_g);
            visit(bp.norm_b);
            visit(bp.w);
            visit(bp.b);
        }
        for (auto& pair : blocks)
            for (auto& ap : pair) {
                visit(ap.ln1_g);
                visit(ap.ln1_b);
                visit(ap.wq);
                visit(ap.bq);
                visit(ap.wk);
                visit(ap.bk);
                visit(ap.wv);
                visit(ap.bv);
                visit(ap.wo);
                visit(ap.bo);
                visit(ap.ln2_g);
                visit(ap.ln2_b);
                visit(ap.wf1);
                visit(ap.bf1);
                visit(ap.wf2);
                visit(ap.bf2);
            }
        for (auto& mp : mask) {
            visit(mp.norm_g);
            visit(mp.norm_b);
            visit(mp.w1);
            visit(mp.b1);
            visit(mp.w2);
            visit(mp.b2);
        }
    }

    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<Params*>(this)->for_each_tensor(
            [&](Tensor<S>& t) { f(static_cast<const Tensor<S>&>(t)); });
    }

    void zero_grad() {
        for_each_tensor([](Tensor<S>& t) { std::fill(t.g.begin(), t.g.end(), S(0)); });
    }

    size_t n_parameters() const {
        size_t n = 0;
        for_each_tensor([&](const Tensor<S>& t) { n += t.size(); });
        return n;
    }

    // training: attention output projections, FFN output layers and mask
    // output layers start at zero, so an untrained model is an identity stack
    // emitting the zero mask. random: everything perturbed (gradient checks).
    void init(uint64_t seed, InitMode mode) {
        auto rng = make_rng(seed);
        for_each_tensor([&](Tensor<S>& t) {
            const std::string& n = t.name;
            const bool is_gamma = n.ends_with("norm_g") || n.ends_with("ln1_g") ||
                                  n.ends_with("ln2_g");
            const bool is_out_proj =
                n.ends_with(".wo") || n.ends_with(".wf2") || n.ends_with(".w2");
            const bool is_weight = t.shape.size() == 2;
            if (mode == InitMode::training) {
                if (is_gamma)
                    std::fill(t.v.begin(), t.v.end(), S(1));
                else if (is_weight && !is_out_proj)
                    fill_normal(rng, t.v, 0.02);
                else
                    std::fill(t.v.begin(), t.v.end(), S(0));
            } else {
                if (is_gamma) {
                    fill_normal(rng, t.v, 0.1);
                    for (auto& x : t.v) x += S(1);
                } else if (is_weight) {
                    fill_normal(rng, t.v, 0.2);
                } else {
                    fill_normal(rng, t.v, 0.1);
                }
            }
        });
    }
};

template <class S>
struct AttnCache {
    int rows = 0;
    std::vector<S> x_in, normed1, q, k, v, probs, ctx, after_att, normed2;
    std::vector<S> ffn_pre, ffn_act;
    std::vector<S> ln1_mean, ln1_inv, ln2_mean, ln2_inv;

    void resize(int r, const ModelConfig& cfg) {
        rows = r;
        const size_t rd = static_cast<size_t>(r) * cfg.embed_dim;
        x_in.resize(rd);
        normed1.resize(rd);
        q.resize(rd);
        k.resize(rd);
        v.resize(rd);
        probs.resize(static_cast<size_t>(cfg.heads) * r * r);
        ctx.resize(rd);
        after_att.resize(rd);
        normed2.resize(rd);
        ffn_pre.resize(static_cast<size_t>(r) * cfg.ffn_dim());
        ffn_act.resize(static_cast<size_t>(r) * cfg.ffn_dim());
        ln1_mean.resize(r);
        ln1_inv.resize(r);
        ln2_mean.resize(r);
        ln2_inv.resize(r);
    }
};

template <class S>
struct BlockCache {
    std::vector<AttnCache<S>> time;  // per band
    std::vector<AttnCache<S>> band;  // per frame
    std::vector<S> rope_time, rope_band;
};

template <class S>
struct ForwardCache {
    std::vector<std::vector<S>> proj_x, proj_normed, proj_mean, proj_inv;
    std::vector<BlockCache<S>> blk;
    std::vector<S> emb_final;  // B*T*D, input to the mask stage
    std::vector<std::vector<S>> mask_normed, mask_mean, mask_inv;
    std::vector<std::vector<S>> mask_h_pre, mask_h_act, mask_out_pre;
    int frames = 0;

    void prepare(int n_bands, int layers) {
        proj_x.resize(n_bands);
        proj_normed.resize(n_bands);
        proj_mean.resize(n_bands);
        proj_inv.resize(n_bands);
        blk.resize(layers);
        mask_normed.resize(n_bands);
        mask_mean.resize(n_bands);
        mask_inv.resize(n_bands);
        mask_h_pre.resize(n_bands);
        mask_h_act.resize(n_bands);
        mask_out_pre.resize(n_bands);
    }
};

// ---- band projection -------------------------------------------------------

// Gather per-band features [re bins, im bins] per channel, normalize, project
// to the embedding dimension with per-band parameters.
template <class S>
BandEmbeddings<S> band_project(const ComplexSpectrogram<S>& spec,
                               const BandMapping& mapping, const Params<S>& params,
                               ForwardCache<S>* fc = nullptr) {
    if (spec.bins != mapping.n_bins)
        throw InvalidInput("band_project: spectrogram/mapping bin count mismatch");
    const ModelConfig& cfg = params.cfg;
    if (spec.channels != cfg.channels)
        throw InvalidInput("band_project: channel count mismatch");
    const int B = mapping.n_bands(), T = spec.frames, D = cfg.embed_dim;
    auto emb = BandEmbeddings<S>::zeros(B, T, D);

    std::vector<S> x, normed, mean_c(T), inv_c(T);
    for (int b = 0; b < B; ++b) {
        const int start = mapping.band_start(b), width = mapping.band_width(b);
        const int in = 2 * width * cfg.channels;
        x.resize(static_cast<size_t>(T) * in);
        normed.resize(x.size());
        for (int t = 0; t < T; ++t) {
            S* row = x.data() + static_cast<size_t>(t) * in;
            for (int c = 0; c < cfg.channels; ++c) {
                std::memcpy(row + (2 * c) * width, &spec.re[spec.idx(c, t, start)],
                            sizeof(S) * width);
                std::memcpy(row + (2 * c + 1) * width, &spec.im[spec.idx(c, t, start)],
                            sizeof(S) * width);
            }
        }
        norm_forward(cfg.norm, x.data(), T, in, params.proj[b].norm_g,
                     params.proj[b].norm_b, normed.data(), mean_c.data(),
                     inv_c.data());
        linear_forward(normed.data(), T, in, params.proj[b].w, params.proj[b].b,
                       emb.at(b, 0));
        if (fc) {
            fc->proj_x[b] = x;
            fc->proj_normed[b] = normed;
            fc->proj_mean[b] = mean_c;
            fc->proj_inv[b] = inv_c;
        }
    }
    return emb;
}

template <class S>
void band_project_backward(const BandMapping& mapping, Params<S>& params,
                           const ForwardCache<S>& fc,
                           const BandEmbeddings<S>& demb) {
    const ModelConfig& cfg = params.cfg;
    const int B = mapping.n_bands(), T = demb.frames;
    std::vector<S> dnormed, dx;
    for (int b = 0; b < B; ++b) {
        const int in = 2 * mapping.band_width(b) * cfg.channels;
        dnormed.resize(static_cast<size_t>(T) * in);
        dx.resize(dnormed.size());
        linear_backward(fc.proj_normed[b].data(), demb.at(b, 0), T, in,
                        params.proj[b].w, params.proj[b].b, dnormed.data());
        // gradient wrt the input spectrogram is discarded: inputs are data
        norm_backward(cfg.norm, fc.proj_x[b].data(), dnormed.data(), T, in,
                      params.proj[b].norm_g, params.proj[b].norm_b,
                      fc.proj_mean[b].data(), fc.proj_inv[b].data(), dx.data());
    }
}

// ---- attention block -------------------------------------------------------

// Pre-norm multi-head self-attention with rotary q/k, then pre-norm FFN,
// both with residual connections. x and y are rows x D, y may not alias x.
template <class S>
void attention_forward(const S* x, int rows, const AttnParams<S>& p,
                       const ModelConfig& cfg, const std::vector<S>& rope_tab,
                       AttnCache<S>& cc, S* y) {
    const int D = cfg.embed_dim, H = cfg.heads, dh = cfg.head_dim();
    const S scale = static_cast<S>(1.0 / std::sqrt(double(dh)));
    cc.resize(rows, cfg);
    std::memcpy(cc.x_in.data(), x, sizeof(S) * rows * D);

    norm_forward(cfg.norm, x, rows, D, p.ln1_g, p.ln1_b, cc.normed1.data(),
                 cc.ln1_mean.data(), cc.ln1_inv.data());
    linear_forward(cc.normed1.data(), rows, D, p.wq, p.bq, cc.q.data());
    linear_forward(cc.normed1.data(), rows, D, p.wk, p.bk, cc.k.data());
    linear_forward(cc.normed1.data(), rows, D, p.wv, p.bv, cc.v.data());
    rope_apply(cc.q.data(), rows, H, dh, rope_tab);
    rope_apply(cc.k.data(), rows, H, dh, rope_tab);

    MapMC<S> Q(cc.q.data(), rows, D), K(cc.k.data(), rows, D), V(cc.v.data(), rows, D);
    MapM<S> C(cc.ctx.data(), rows, D);
    for (int h = 0; h < H; ++h) {
        MapM<S> P(cc.probs.data() + static_cast<size_t>(h) * rows * rows, rows, rows);
        P.noalias() = Q.block(0, h * dh, rows, dh) *
                      K.block(0, h * dh, rows, dh).transpose() * scale;
        softmax_rows(P.data(), rows, rows);
        C.block(0, h * dh, rows, dh).noalias() = P * V.block(0, h * dh, rows, dh);
    }

    linear_forward(cc.ctx.data(), rows, D, p.wo, p.bo, cc.after_att.data());
    MapM<S> AA(cc.after_att.data(), rows, D);
    AA += MapMC<S>(x, rows, D);

    norm_forward(cfg.norm, cc.after_att.data(), rows, D, p.ln2_g, p.ln2_b,
                 cc.normed2.data(), cc.ln2_mean.data(), cc.ln2_inv.data());
    const int Df = cfg.ffn_dim();
    linear_forward(cc.normed2.data(), rows, D, p.wf1, p.bf1, cc.ffn_pre.data());
    for (size_t i = 0; i < cc.ffn_pre.size(); ++i) cc.ffn_act[i] = gelu(cc.ffn_pre[i]);
    linear_forward(cc.ffn_act.data(), rows, Df, p.wf2, p.bf2, y);
    MapM<S> Y(y, rows, D);
    Y += AA;

    if (!all_finite(y, static_cast<size_t>(rows) * D))
        throw NumericalError("numerical blow-up");
}

// dy is rows x D; dx receives the gradient wrt the block input.
template <class S>
void attention_backward(AttnParams<S>& p, const ModelConfig& cfg,
                        const std::vector<S>& rope_tab, const AttnCache<S>& cc,
                        const S* dy, S* dx) {
    const int rows = cc.rows, D = cfg.embed_dim, H = cfg.heads, dh = cfg.head_dim();
    const int Df = cfg.ffn_dim();
    const S scale = static_cast<S>(1.0 / std::sqrt(double(dh)));

    std::vector<S> d_ffn_act(static_cast<size_t>(rows) * Df);
    linear_backward(cc.ffn_act.data(), dy, rows, Df, p.wf2, p.bf2, d_ffn_act.data());
    std::vector<S> d_ffn_pre(d_ffn_act.size());
    for (size_t i = 0; i < d_ffn_act.size(); ++i)
        d_ffn_pre[i] = d_ffn_act[i] * gelu_grad(cc.ffn_pre[i]);
    std::vector<S> d_normed2(static_cast<size_t>(rows) * D);
    linear_backward(cc.normed2.data(), d_ffn_pre.data(), rows, D, p.wf1, p.bf1,
                    d_normed2.data());
    std::vector<S> d_after_att(static_cast<size_t>(rows) * D);
    norm_backward(cfg.norm, cc.after_att.data(), d_normed2.data(), rows, D,
                  p.ln2_g, p.ln2_b, cc.ln2_mean.data(), cc.ln2_inv.data(),
                  d_after_att.data());
    for (size_t i = 0; i < d_after_att.size(); ++i) d_after_att[i] += dy[i];

    std::vector<S> d_ctx(static_cast<size_t>(rows) * D);
    linear_backward(cc.ctx.data(), d_after_att.data(), rows, D, p.wo, p.bo,
                    d_ctx.data());
    std::vector<S> dq(static_cast<size_t>(rows) * D), dk(dq.size()), dv(dq.size());
    MapMC<S> Q(cc.q.data(), rows, D), K(cc.k.data(), rows, D), V(cc.v.data(), rows, D);
    MapMC<S> dC(d_ctx.data(), rows, D);
    MapM<S> dQ(dq.data(), rows, D), dK(dk.data(), rows, D), dV(dv.data(), rows, D);
    std::vector<S> dprobs(static_cast<size_t>(rows) * rows), dscores(dprobs.size());
    for (int h = 0; h < H; ++h) {
        const S* probs = cc.probs.data() + static_cast<size_t>(h) * rows * rows;
        MapMC<S> P(probs, rows, rows);
        MapM<S> dP(dprobs.data(), rows, rows);
        dP.noalias() = dC.block(0, h * dh, rows, dh) *
                       V.block(0, h * dh, rows, dh).transpose();
        dV.block(0, h * dh, rows, dh).noalias() =
            P.transpose() * dC.block(0, h * dh, rows, dh);
        softmax_backward_rows(probs, dprobs.data(), rows, rows, dscores.data());
        MapMC<S> dSc(dscores.data(), rows, rows);
        dQ.block(0, h * dh, rows, dh).noalias() =
            dSc * K.block(0, h * dh, rows, dh) * scale;
        dK.block(0, h * dh, rows, dh).noalias() =
            dSc.transpose() * Q.block(0, h * dh, rows, dh) * scale;
    }
    rope_apply(dq.data(), rows, H, dh, rope_tab, /*inverse=*/true);
    rope_apply(dk.data(), rows, H, dh, rope_tab, /*inverse=*/true);

    std::vector<S> d_normed1(static_cast<size_t>(rows) * D), tmp(d_normed1.size());
    linear_backward(cc.normed1.data(), dq.data(), rows, D, p.wq, p.bq,
                    d_normed1.data());
    linear_backward(cc.normed1.data(), dk.data(), rows, D, p.wk, p.bk, tmp.data());
    for (size_t i = 0; i < d_normed1.size(); ++i) d_normed1[i] += tmp[i];
    linear_backward(cc.normed1.data(), dv.data(), rows, D, p.wv, p.bv, tmp.data());
    for (size_t i = 0; i < d_normed1.size(); ++i) d_normed1[i] += tmp[i];

    norm_backward(cfg.norm, cc.x_in.data(), d_normed1.data(), rows, D, p.ln1_g,
                  p.ln1_b, cc.ln1_mean.data(), cc.ln1_inv.data(), dx);
    for (size_t i = 0; i < static_cast<size_t>(rows) * D; ++i)
        dx[i] += d_after_att[i];
}

// ---- hierarchical block ------------------------------------------------------

// Attention along frames within each band, then along bands within each frame.
template <class S>
void hierarchical_block(BandEmbeddings<S>& emb, int layer, const Params<S>& params,
                        BlockCache<S>& bc) {
    const ModelConfig& cfg = params.cfg;
    const int B = emb.n_bands, T = emb.frames, D = emb.dim, dh = cfg.head_dim();
    bc.time.resize(B);
    bc.band.resize(T);

    std::vector<int> pos_t(T), pos_b(B);
    for (int t = 0; t < T; ++t) pos_t[t] = t;
    for (int b = 0; b < B; ++b) pos_b[b] = b;
    bc.rope_time = rope_table<S>(pos_t, dh, cfg.rope_base);
    bc.rope_band = rope_table<S>(pos_b, dh, cfg.rope_base);

    std::vector<S> y(static_cast<size_t>(T) * D);
    for (int b = 0; b < B; ++b) {
        attention_forward(emb.at(b, 0), T, params.blocks[layer][0], cfg,
                          bc.rope_time, bc.time[b], y.data());
        std::memcpy(emb.at(b, 0), y.data(), sizeof(S) * T * D);
    }

    std::vector<S> seq(static_cast<size_t>(B) * D), yb(seq.size());
    for (int t = 0; t < T; ++t) {
        for (int b = 0; b < B; ++b)
            std::memcpy(seq.data() + static_cast<size_t>(b) * D, emb.at(b, t),
                        sizeof(S) * D);
        attention_forward(seq.data(), B, params.blocks[layer][1], cfg,
                          bc.rope_band, bc.band[t], yb.data());
        for (int b = 0; b < B; ++b)
            std::memcpy(emb.at(b, t), yb.data() + static_cast<size_t>(b) * D,
                        sizeof(S) * D);
    }
}

template <class S>
void hierarchical_block_backward(BandEmbeddings<S>& demb, int layer,
                                 Params<S>& params, const BlockCache<S>& bc) {
    const ModelConfig& cfg = params.cfg;
    const int B = demb.n_bands, T = demb.frames, D = demb.dim;

    std::vector<S> dseq(static_cast<size_t>(B) * D), dxb(dseq.size());
    for (int t = 0; t < T; ++t) {
        for (int b = 0; b < B; ++b)
            std::memcpy(dseq.data() + static_cast<size_t>(b) * D, demb.at(b, t),
                        sizeof(S) * D);
        attention_backward(params.blocks[layer][1], cfg, bc.rope_band, bc.band[t],
                           dseq.data(), dxb.data());
        for (int b = 0; b < B; ++b)
            std::memcpy(demb.at(b, t), dxb.data() + static_cast<size_t>(b) * D,
                        sizeof(S) * D);
    }

    std::vector<S> dx(static_cast<size_t>(T) * D);
    for (int b = 0; b < B; ++b) {
        attention_backward(params.blocks[layer][0], cfg, bc.rope_time, bc.time[b],
                           demb.at(b, 0), dx.data());
        std::memcpy(demb.at(b, 0), dx.data(), sizeof(S) * T * D);
    }
}

// ---- mask estimation ---------------------------------------------------------

// Per-band MLP from embeddings to real/imag mask values over the band's bins.
// Row layout matches the projection input: [c][re bins][im bins].
template <class S>
std::vector<std::vector<S>> estimate_band_masks(const BandEmbeddings<S>& emb,
                                                const BandMapping& mapping,
                                                const Params<S>& params,
                                                ForwardCache<S>* fc = nullptr) {
    const ModelConfig& cfg = params.cfg;
    if (emb.n_bands != mapping.n_bands())
        throw InvalidInput("estimate_band_masks: band count mismatch");
    const int B = emb.n_bands, T = emb.frames, D = emb.dim, Dm = cfg.mask_hidden();
    std::vector<std::vector<S>> out(B);
    std::vector<S> normed(static_cast<size_t>(T) * D), mean_c(T), inv_c(T);
    std::vector<S> h_pre(static_cast<size_t>(T) * Dm), h_act(h_pre.size());
    for (int b = 0; b < B; ++b) {
        const int width = band_feature_width(mapping, b, cfg.channels);
        const int wide = cfg.gated_mask ? 2 * width : width;
        norm_forward(cfg.norm, emb.at(b, 0), T, D, params.mask[b].norm_g,
                     params.mask[b].norm_b, normed.data(), mean_c.data(),
                     inv_c.data());
        linear_forward(normed.data(), T, D, params.mask[b].w1, params.mask[b].b1,
                       h_pre.data());
        for (size_t i = 0; i < h_pre.size(); ++i)
            h_act[i] = static_cast<S>(std::tanh(double(h_pre[i])));
        std::vector<S> pre(static_cast<size_t>(T) * wide);
        linear_forward(h_act.data(), T, Dm, params.mask[b].w2, params.mask[b].b2,
                       pre.data());
        out[b].resize(static_cast<size_t>(T) * width);
        if (cfg.gated_mask) {
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < width; ++j) {
                    const S a = pre[static_cast<size_t>(t) * wide + j];
                    const S gate = pre[static_cast<size_t>(t) * wide + width + j];
                    const S sg = static_cast<S>(1.0 / (1.0 + std::exp(-double(gate))));
                    out[b][static_cast<size_t>(t) * width + j] = a * sg;
                }
        } else {
            out[b] = pre;
        }
        if (fc) {
            fc->mask_normed[b] = normed;
            fc->mask_mean[b] = mean_c;
            fc->mask_inv[b] = inv_c;
            fc->mask_h_pre[b] = h_pre;
            fc->mask_h_act[b] = h_act;
            fc->mask_out_pre[b] = std::move(pre);
        }
    }
    return out;
}

// Accumulates parameter grads and writes the embedding gradient into demb.
template <class S>
void estimate_band_masks_backward(const BandMapping& mapping, Params<S>& params,
                                  const ForwardCache<S>& fc,
                                  const std::vector<std::vector<S>>& dband_masks,
                                  BandEmbeddings<S>& demb) {
    const ModelConfig& cfg = params.cfg;
    const int B = mapping.n_bands(), T = demb.frames, D = demb.dim;
    const int Dm = cfg.mask_hidden();
    const S* emb_final = fc.emb_final.data();
    std::vector<S> dpre, dh_act(static_cast<size_t>(T) * Dm), dh_pre(dh_act.size());
    std::vector<S> dnormed(static_cast<size_t>(T) * D);
    for (int b = 0; b < B; ++b) {
        const int width = band_feature_width(mapping, b, cfg.channels);
        const int wide = cfg.gated_mask ? 2 * width : width;
        if (cfg.gated_mask) {
            dpre.assign(static_cast<size_t>(T) * wide, S(0));
            const auto& pre = fc.mask_out_pre[b];
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < width; ++j) {
                    const size_t o = static_cast<size_t>(t) * wide;
                    const S a = pre[o + j];
                    const S gate = pre[o + width + j];
                    const S sg = static_cast<S>(1.0 / (1.0 + std::exp(-double(gate))));
                    const S d = dband_masks[b][static_cast<size_t>(t) * width + j];
                    dpre[o + j] = d * sg;
                    dpre[o + width + j] = d * a * sg * (S(1) - sg);
                }
        } else {
            dpre = dband_masks[b];
        }
        linear_backward(fc.mask_h_act[b].data(), dpre.data(), T, Dm,
                        params.mask[b].w2, params.mask[b].b2, dh_act.data());
        for (size_t i = 0; i < dh_act.size(); ++i) {
            const S th = fc.mask_h_act[b][i];
            dh_pre[i] = dh_act[i] * (S(1) - th * th);
        }
        linear_backward(fc.mask_normed[b].data(), dh_pre.data(), T, D,
                        params.mask[b].w1, params.mask[b].b1, dnormed.data());
        norm_backward(cfg.norm,
                      emb_final + (static_cast<size_t>(b) * T) * D, dnormed.data(),
                      T, D, params.mask[b].norm_g, params.mask[b].norm_b,
                      fc.mask_mean[b].data(), fc.mask_inv[b].data(), demb.at(b, 0));
    }
}

// ---- mask merge and application ----------------------------------------------

// Overlapped bins take the arithmetic mean of the contributing band values,
// independently for the real and imaginary planes.
template <class S>
ComplexMask<S> merge_masks(const std::vector<std::vector<S>>& band_masks,
                           const BandMapping& mapping, int frames, int channels) {
    const int F = mapping.n_bins;
    auto mask = ComplexMask<S>::zeros(F, frames, channels);
    std::vector<int> cover(F, 0);
    for (int b = 0; b < mapping.n_bands(); ++b)
        for (int f = mapping.band_start(b); f <= mapping.band_end(b); ++f) ++cover[f];
    for (int f = 0; f < F; ++f)
        if (cover[f] == 0) throw InvalidInput("bin without band");

    for (int b = 0; b < mapping.n_bands(); ++b) {
        const int start = mapping.band_start(b), width = mapping.band_width(b);
        const int row_w = 2 * width * channels;
        for (int t = 0; t < frames; ++t) {
            const S* row = band_masks[b].data() + static_cast<size_t>(t) * row_w;
            for (int c = 0; c < channels; ++c)
                for (int j = 0; j < width; ++j) {
                    mask.re[mask.idx(c, t, start + j)] += row[(2 * c) * width + j];
                    mask.im[mask.idx(c, t, start + j)] += row[(2 * c + 1) * width + j];
                }
        }
    }
    for (int c = 0; c < channels; ++c)
        for (int t = 0; t < frames; ++t)
            for (int f = 0; f < F; ++f) {
                const S inv = S(1) / static_cast<S>(cover[f]);
                mask.re[mask.idx(c, t, f)] *= inv;
                mask.im[mask.idx(c, t, f)] *= inv;
            }
    return mask;
}

template <class S>
std::vector<std::vector<S>> merge_masks_backward(const ComplexMask<S>& dmask,
                                                 const BandMapping& mapping) {
    const int F = mapping.n_bins, T = dmask.frames, C = dmask.channels;
    std::vector<int> cover(F, 0);
    for (int b = 0; b < mapping.n_bands(); ++b)
        for (int f = mapping.band_start(b); f <= mapping.band_end(b); ++f) ++cover[f];

    std::vector<std::vector<S>> dband(mapping.n_bands());
    for (int b = 0; b < mapping.n_bands(); ++b) {
        const int start = mapping.band_start(b), width = mapping.band_width(b);
        const int row_w = 2 * width * C;
        dband[b].assign(static_cast<size_t>(T) * row_w, S(0));
        for (int t = 0; t < T; ++t) {
            S* row = dband[b].data() + static_cast<size_t>(t) * row_w;
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < width; ++j) {
                    const S inv = S(1) / static_cast<S>(cover[start + j]);
                    row[(2 * c) * width + j] = dmask.re[dmask.idx(c, t, start + j)] * inv;
                    row[(2 * c + 1) * width + j] =
                        dmask.im[dmask.idx(c, t, start + j)] * inv;
                }
        }
    }
    return dband;
}

// Elementwise complex multiplication (a+bi)(c+di).
template <class S>
ComplexSpectrogram<S> apply_mask(const ComplexSpectrogram<S>& spec,
                                 const ComplexMask<S>& mask) {
    if (spec.bins != mask.bins || spec.frames != mask.frames ||
        spec.channels != mask.channels)
        throw InvalidInput("apply_mask: shape mismatch");
    auto out = ComplexSpectrogram<S>::zeros(spec.bins, spec.frames, spec.channels,
                                            spec.cfg, spec.orig_len);
    for (size_t i = 0; i < spec.re.size(); ++i) {
        const S a = spec.re[i], bb = spec.im[i];
        const S c = mask.re[i], d = mask.im[i];
        out.re[i] = a * c - bb * d;
        out.im[i] = a * d + bb * c;
    }
    return out;
}

// Gradient wrt the mask given the gradient wrt the masked spectrogram.
template <class S>
ComplexMask<S> apply_mask_backward(const ComplexSpectrogram<S>& spec,
                                   const ComplexSpectrogram<S>& dest) {
    auto dmask = ComplexMask<S>::zeros(spec.bins, spec.frames, spec.channels);
    for (size_t i = 0; i < spec.re.size(); ++i) {
        const S a = spec.re[i], bb = spec.im[i];
        dmask.re[i] = a * dest.re[i] + bb * dest.im[i];
        dmask.im[i] = -bb * dest.re[i] + a * dest.im[i];
    }
    return dmask;
}

// ---- full model ---------------------------------------------------------------

template <class S>
ComplexMask<S> model_forward(const ComplexSpectrogram<S>& spec,
                             const BandMapping& mapping, const Params<S>& params,
                             ForwardCache<S>* fc = nullptr) {
    const int B = mapping.n_bands(), L = params.cfg.blocks;
    if (fc) {
        fc->prepare(B, L);
        fc->frames = spec.frames;
    }
    auto emb = band_project(spec, mapping, params, fc);
    BlockCache<S> scratch;
    for (int l = 0; l < L; ++l)
        hierarchical_block(emb, l, params, fc ? fc->blk[l] : scratch);
    if (fc) fc->emb_final = emb.v;
    auto band_masks = estimate_band_masks(emb, mapping, params, fc);
    return merge_masks(band_masks, mapping, spec.frames, spec.channels);
}

// Accumulates parameter gradients from the gradient wrt the merged mask.
template <class S>
void model_backward(const BandMapping& mapping, Params<S>& params,
                    const ForwardCache<S>& fc, const ComplexMask<S>& dmask) {
    auto dband = merge_masks_backward(dmask, mapping);
    auto demb = BandEmbeddings<S>::zeros(mapping.n_bands(), fc.frames,
                                         params.cfg.embed_dim);
    estimate_band_masks_backward(mapping, params, fc, dband, demb);
    for (int l = params.cfg.blocks - 1; l >= 0; --l)
        hierarchical_block_backward(demb, l, params, fc.blk[l]);
    band_project_backward(mapping, params, fc, demb);
}

// Debug params: identity stack plus a constant 1+0i mask, independent of the
// input. Gate biases are driven to saturation when the mask MLP is gated.
template <class S>
Params<S> make_identity_mask_params(const ModelConfig& cfg,
                                    const BandMapping& mapping) {
    auto p = Params<S>::build(cfg, mapping);
    p.init(0, InitMode::training);
    for (int b = 0; b < mapping.n_bands(); ++b) {
        const int bins = mapping.band_width(b);
        const int width = band_feature_width(mapping, b, cfg.channels);
        auto& b2 = p.mask[b].b2;
        // row layout: [c][re bins][im bins]; real positions get 1
        for (int c = 0; c < cfg.channels; ++c)
            for (int j = 0; j < bins; ++j) b2.v[(2 * c) * bins + j] = S(1);
        if (cfg.gated_mask)
            for (int j = 0; j < width; ++j) b2.v[width + j] = S(25);
    }
    return p;
}

}  // namespace melsep
