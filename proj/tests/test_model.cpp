// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "melsep/model.hpp"

using namespace melsep;

namespace {

// Overlapping 4-band mapping over 16 bins, full coverage, <=2-way overlap.
BandMapping tiny_mapping() {
    BandMapping m;
    m.n_bins = 16;
    m.mode = MappingMode::mel_overlapping;
    m.patched = true;
    m.bands = {{0, 5}, {3, 9}, {7, 12}, {10, 15}};
    return m;
}

ModelConfig tiny_config(int channels = 2) {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.ffn_multiplier = 4;
    cfg.mask_multiplier = 4;
    cfg.channels = channels;
    return cfg;
}

ComplexSpectrogram<double> random_spec(std::mt19937_64& rng, int bins, int frames,
                                       int channels) {
    WindowConfig wc;  // carrier only; not used by the model path
    auto s = ComplexSpectrogram<double>::zeros(bins, frames, channels, wc, 0);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& v : s.re) v = d(rng);
    for (auto& v : s.im) v = d(rng);
    return s;
}

// Random contiguous-band mapping over n_bins with at most 3-way overlap:
// partition into bands of width >= 3, then stretch each end by up to 2 bins.
BandMapping random_overlapping_mapping(std::mt19937_64& rng, int n_bins) {
    std::vector<int> bounds{0};
    int pos = 0;
    while (pos < n_bins) {
        pos += 3 + static_cast<int>(rng() % 5);
        bounds.push_back(std::min(pos, n_bins));
    }
    if (bounds.size() < 3) bounds = {0, n_bins / 2, n_bins};
    BandMapping m;
    m.n_bins = n_bins;
    m.mode = MappingMode::mel_overlapping;
    m.patched = true;
    for (size_t i = 0; i + 1 < bounds.size(); ++i) {
        int s = bounds[i], e = bounds[i + 1] - 1;
        s = std::max(0, s - static_cast<int>(rng() % 3));
        e = std::min(n_bins - 1, e + static_cast<int>(rng() % 3));
        m.bands.emplace_back(s, e);
    }
    return m;
}

// ---- independent scalar reimplementation (plain loops, no shared helpers) --

std::vector<double> o_rmsnorm(const std::vector<double>& x, int dim,
                              const std::vector<double>& gamma) {
    std::vector<double> y(x.size());
    const int rows = static_cast<int>(x.size()) / dim;
    for (int r = 0; r < rows; ++r) {
        double ms = 0;
        for (int i = 0; i < dim; ++i) ms += x[r * dim + i] * x[r * dim + i];
        const double inv = 1.0 / std::sqrt(ms / dim + 1e-8);
        for (int i = 0; i < dim; ++i) y[r * dim + i] = x[r * dim + i] * inv * gamma[i];
    }
    return y;
}

std::vector<double> o_linear(const std::vector<double>& x, int rows, int in,
                             const std::vector<double>& w,
                             const std::vector<double>& b, int out) {
    std::vector<double> y(static_cast<size_t>(rows) * out, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (int i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
            y[r * out + o] = acc;
        }
    return y;
}

void o_rope(std::vector<double>& x, int rows, int heads, int dh, double base) {
    for (int r = 0; r < rows; ++r)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < dh / 2; ++i) {
                const double theta = std::pow(base, -2.0 * i / dh);
                const double c = std::cos(r * theta), s = std::sin(r * theta);
                double& a = x[(r * heads + h) * dh + 2 * i];
                double& b = x[(r * heads + h) * dh + 2 * i + 1];
                const double a0 = a, b0 = b;
                a = a0 * c - b0 * s;
                b = a0 * s + b0 * c;
            }
}

std::vector<double> o_attention(const std::vector<double>& x, int rows,
                                const AttnParams<double>& p,
                                const ModelConfig& cfg) {
    const int D = cfg.embed_dim, H = cfg.heads, dh = cfg.head_dim();
    auto n1 = o_rmsnorm(x, D, p.ln1_g.v);
    auto q = o_linear(n1, rows, D, p.wq.v, p.bq.v, D);
    auto k = o_linear(n1, rows, D, p.wk.v, p.bk.v, D);
    auto v = o_linear(n1, rows, D, p.wv.v, p.bv.v, D);
    o_rope(q, rows, H, dh, cfg.rope_base);
    o_rope(k, rows, H, dh, cfg.rope_base);
    std::vector<double> ctx(static_cast<size_t>(rows) * D, 0.0);
    for (int h = 0; h < H; ++h)
        for (int t = 0; t < rows; ++t) {
            std::vector<double> sc(rows);
            double mx = -1e300;
            for (int u = 0; u < rows; ++u) {
                double acc = 0;
                for (int i = 0; i < dh; ++i)
                    acc += q[t * D + h * dh + i] * k[u * D + h * dh + i];
                sc[u] = acc / std::sqrt(double(dh));
                mx = std::max(mx, sc[u]);
            }
            double z = 0;
            for (int u = 0; u < rows; ++u) {
                sc[u] = std::exp(sc[u] - mx);
                z += sc[u];
            }
            for (int u = 0; u < rows; ++u) sc[u] /= z;
            for (int i = 0; i < dh; ++i) {
                double acc = 0;
                for (int u = 0; u < rows; ++u) acc += sc[u] * v[u * D + h * dh + i];
                ctx[t * D + h * dh + i] = acc;
            }
        }
    auto att = o_linear(ctx, rows, D, p.wo.v, p.bo.v, D);
    std::vector<double> after(att.size());
    for (size_t i = 0; i < att.size(); ++i) after[i] = x[i] + att[i];
    auto n2 = o_rmsnorm(after, D, p.ln2_g.v);
    auto f1 = o_linear(n2, rows, D, p.wf1.v, p.bf1.v, cfg.ffn_dim());
    for (auto& val : f1) val = 0.5 * val * (1.0 + std::erf(val / M_SQRT2));
    auto f2 = o_linear(f1, rows, cfg.ffn_dim(), p.wf2.v, p.bf2.v, D);
    std::vector<double> y(after.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = after[i] + f2[i];
    return y;
}

// Full straight-line forward: returns mask planes [c][t][f].
std::pair<std::vector<double>, std::vector<double>> o_forward(
    const ComplexSpectrogram<double>& spec, const BandMapping& mapping,
    const Params<double>& P) {
    const ModelConfig& cfg = P.cfg;
    const int B = mapping.n_bands(), T = spec.frames, D = cfg.embed_dim;
    const int C = cfg.channels;

    std::vector<std::vector<double>> emb(B);
    for (int b = 0; b < B; ++b) {
        const int start = mapping.band_start(b), w = mapping.band_width(b);
        const int in = 2 * w * C;
        std::vector<double> x(static_cast<size_t>(T) * in);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < w; ++j) {
                    x[t * in + (2 * c) * w + j] = spec.at_re(c, t, start + j);
                    x[t * in + (2 * c + 1) * w + j] = spec.at_im(c, t, start + j);
                }
        auto nx = o_rmsnorm(x, in, P.proj[b].norm_g.v);
        emb[b] = o_linear(nx, T, in, P.proj[b].w.v, P.proj[b].b.v, D);
    }
    for (int l = 0; l < cfg.blocks; ++l) {
        for (int b = 0; b < B; ++b)
            emb[b] = o_attention(emb[b], T, P.blocks[l][0], cfg);
        for (int t = 0; t < T; ++t) {
            std::vector<double> seq(static_cast<size_t>(B) * D);
            for (int b = 0; b < B; ++b)
                for (int d = 0; d < D; ++d) seq[b * D + d] = emb[b][t * D + d];
            auto out = o_attention(seq, B, P.blocks[l][1], cfg);
            for (int b = 0; b < B; ++b)
                for (int d = 0; d < D; ++d) emb[b][t * D + d] = out[b * D + d];
        }
    }
    // mask MLPs and overlap-average merge
    const int F = mapping.n_bins;
    std::vector<double> mre(static_cast<size_t>(C) * T * F, 0.0), mim(mre.size(), 0.0);
    std::vector<int> cover(F, 0);
    for (int b = 0; b < B; ++b)
        for (int f = mapping.band_start(b); f <= mapping.band_end(b); ++f) ++cover[f];
    for (int b = 0; b < B; ++b) {
        const int start = mapping.band_start(b), w = mapping.band_width(b);
        const int out_w = 2 * w * C;
        const int wide = cfg.gated_mask ? 2 * out_w : out_w;
        auto n = o_rmsnorm(emb[b], D, P.mask[b].norm_g.v);
        auto h = o_linear(n, T, D, P.mask[b].w1.v, P.mask[b].b1.v, cfg.mask_hidden());
        for (auto& val : h) val = std::tanh(val);
        auto pre = o_linear(h, T, cfg.mask_hidden(), P.mask[b].w2.v, P.mask[b].b2.v,
                            wide);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < w; ++j) {
                    double vre, vim;
                    if (cfg.gated_mask) {
                        auto glu = [&](int idx) {
                            const double a = pre[t * wide + idx];
                            const double g = pre[t * wide + out_w + idx];
                            return a / (1.0 + std::exp(-g));
                        };
                        vre = glu((2 * c) * w + j);
                        vim = glu((2 * c + 1) * w + j);
                    } else {
                        vre = pre[t * wide + (2 * c) * w + j];
                        vim = pre[t * wide + (2 * c + 1) * w + j];
                    }
                    mre[(c * T + t) * static_cast<size_t>(F) + start + j] +=
                        vre / cover[start + j];
                    mim[(c * T + t) * static_cast<size_t>(F) + start + j] +=
                        vim / cover[start + j];
                }
    }
    return {mre, mim};
}

}  // namespace

TEST_CASE("band_project shape and zero case") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    auto params = Params<double>::build(cfg, mapping);
    params.init(1, InitMode::random);
    std::mt19937_64 rng(2);
    auto spec = random_spec(rng, 16, 5, 2);

    auto emb = band_project(spec, mapping, params);
    CHECK(emb.n_bands == 4);
    CHECK(emb.frames == 5);
    CHECK(emb.dim == 8);

    SECTION("zero spectrogram with zero biases gives zero embeddings") {
        for (auto& v : spec.re) v = 0.0;
        for (auto& v : spec.im) v = 0.0;
        for (auto& bp : params.proj) std::fill(bp.b.v.begin(), bp.b.v.end(), 0.0);
        auto e0 = band_project(spec, mapping, params);
        for (double v : e0.v) CHECK(v == 0.0);
    }

    SECTION("bin count mismatch is rejected") {
        auto bad = random_spec(rng, 17, 5, 2);
        CHECK_THROWS_AS(band_project(bad, mapping, params), InvalidInput);
    }
}

TEST_CASE("band_project is homogeneous without normalization") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    cfg.norm = NormKind::none;
    auto params = Params<double>::build(cfg, mapping);
    params.init(3, InitMode::random);
    for (auto& bp : params.proj) std::fill(bp.b.v.begin(), bp.b.v.end(), 0.0);
    std::mt19937_64 rng(4);
    auto spec = random_spec(rng, 16, 5, 2);
    auto spec2 = spec;
    for (auto& v : spec2.re) v *= 2.0;
    for (auto& v : spec2.im) v *= 2.0;

    auto e1 = band_project(spec, mapping, params);
    auto e2 = band_project(spec2, mapping, params);
    for (size_t i = 0; i < e1.v.size(); ++i)
        CHECK(e2.v[i] == Catch::Approx(2.0 * e1.v[i]).margin(1e-9));
}

TEST_CASE("rope basics") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const int dim = 16;

    SECTION("position zero is the identity") {
        std::vector<double> x(dim), orig;
        for (auto& v : x) v = d(rng);
        orig = x;
        rope_rotate(x.data(), 1, dim, {0});
        CHECK(x == orig);
    }

    SECTION("rotation preserves norms") {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> x(dim);
            for (auto& v : x) v = d(rng);
            double n0 = 0;
            for (double v : x) n0 += v * v;
            rope_rotate(x.data(), 1, dim, {static_cast<int>(rng() % 700)});
            double n1 = 0;
            for (double v : x) n1 += v * v;
            CHECK(std::sqrt(n1) == Catch::Approx(std::sqrt(n0)).epsilon(1e-9));
        }
    }

    SECTION("odd head dim is rejected") {
        std::vector<double> x(7);
        CHECK_THROWS_AS(rope_rotate(x.data(), 1, 7, {0}), InvalidInput);
    }

    SECTION("attention scores depend only on relative position (single prec)") {
        std::mt19937_64 frng(6);
        std::uniform_real_distribution<float> fd(-1.0f, 1.0f);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<float> q(dim), k(dim);
            for (auto& v : q) v = fd(frng);
            for (auto& v : k) v = fd(frng);
            const int m = static_cast<int>(frng() % 512);
            const int n = static_cast<int>(frng() % 512);
            const int s = std::vector<int>{1, 7, 100}[trial % 3];
            auto dot_at = [&](int pm, int pn) {
                auto qq = q, kk = k;
                rope_rotate(qq.data(), 1, dim, {pm});
                rope_rotate(kk.data(), 1, dim, {pn});
                double acc = 0;
                for (int i = 0; i < dim; ++i) acc += double(qq[i]) * kk[i];
                return acc;
            };
            double nq = 0, nk = 0;
            for (int i = 0; i < dim; ++i) {
                nq += double(q[i]) * q[i];
                nk += double(k[i]) * k[i];
            }
            const double scale = std::sqrt(nq) * std::sqrt(nk);
            CHECK(std::abs(dot_at(m, n) - dot_at(m + s, n + s)) / scale <= 1e-5);
        }
    }
}

TEST_CASE("attention block shape and identities") {
    auto cfg = tiny_config();
    const int T = 6, D = cfg.embed_dim;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> x(static_cast<size_t>(T) * D);
    for (auto& v : x) v = d(rng);

    auto mapping = tiny_mapping();
    auto params = Params<double>::build(cfg, mapping);

    std::vector<int> pos(T);
    for (int t = 0; t < T; ++t) pos[t] = t;
    auto tab = rope_table<double>(pos, cfg.head_dim(), cfg.rope_base);

    SECTION("zeroed output projections make the block an exact identity") {
        params.init(11, InitMode::training);  // wo, wf2 start at zero
        AttnCache<double> cc;
        std::vector<double> y(x.size());
        attention_forward(x.data(), T, params.blocks[0][0], cfg, tab, cc, y.data());
        CHECK(y == x);
    }

    SECTION("random params preserve shape and finiteness") {
        params.init(12, InitMode::random);
        AttnCache<double> cc;
        std::vector<double> y(x.size());
        attention_forward(x.data(), T, params.blocks[0][0], cfg, tab, cc, y.data());
        REQUIRE(y.size() == x.size());
        for (double v : y) CHECK(std::isfinite(v));
    }

    SECTION("single token: attention weight is one, matches closed form") {
        params.init(13, InitMode::random);
        const auto& p = params.blocks[0][0];
        std::vector<double> x1(x.begin(), x.begin() + D);
        AttnCache<double> cc;
        std::vector<double> y(D);
        auto tab1 = rope_table<double>(std::vector<int>{0}, cfg.head_dim(),
                                       cfg.rope_base);
        attention_forward(x1.data(), 1, p, cfg, tab1, cc, y.data());

        // closed form: probs == 1 so ctx == v
        auto n1 = o_rmsnorm(x1, D, p.ln1_g.v);
        auto v = o_linear(n1, 1, D, p.wv.v, p.bv.v, D);
        auto att = o_linear(v, 1, D, p.wo.v, p.bo.v, D);
        std::vector<double> after(D);
        for (int i = 0; i < D; ++i) after[i] = x1[i] + att[i];
        auto n2 = o_rmsnorm(after, D, p.ln2_g.v);
        auto f1 = o_linear(n2, 1, D, p.wf1.v, p.bf1.v, cfg.ffn_dim());
        for (auto& val : f1) val = 0.5 * val * (1.0 + std::erf(val / M_SQRT2));
        auto f2 = o_linear(f1, 1, cfg.ffn_dim(), p.wf2.v, p.bf2.v, D);
        for (int i = 0; i < D; ++i)
            CHECK(y[i] == Catch::Approx(after[i] + f2[i]).margin(1e-9));
        // attention weights: single position softmax is exactly 1
        for (int h = 0; h < cfg.heads; ++h) CHECK(cc.probs[h] == 1.0);
    }

    SECTION("non-finite input is reported as numerical blow-up") {
        params.init(14, InitMode::random);
        x[3] = std::numeric_limits<double>::infinity();
        AttnCache<double> cc;
        std::vector<double> y(x.size());
        CHECK_THROWS_AS(
            attention_forward(x.data(), T, params.blocks[0][0], cfg, tab, cc,
                              y.data()),
            NumericalError);
    }
}

TEST_CASE("hierarchical block preserves shape; identity blocks pass through") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    auto params = Params<double>::build(cfg, mapping);
    params.init(21, InitMode::training);
    std::mt19937_64 rng(22);
    auto emb = BandEmbeddings<double>::zeros(4, 5, 8);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& v : emb.v) v = d(rng);
    auto orig = emb.v;

    BlockCache<double> bc;
    hierarchical_block(emb, 0, params, bc);
    CHECK(emb.n_bands == 4);
    CHECK(emb.frames == 5);
    CHECK(emb.v == orig);  // zero-init output projections
}

TEST_CASE("estimate_band_masks shapes and parameter audit") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    auto params = Params<double>::build(cfg, mapping);
    params.init(31, InitMode::random);
    std::mt19937_64 rng(32);
    auto emb = BandEmbeddings<double>::zeros(4, 5, 8);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& v : emb.v) v = d(rng);

    auto masks = estimate_band_masks(emb, mapping, params);
    REQUIRE(masks.size() == 4);
    for (int b = 0; b < 4; ++b) {
        const int expect = 2 * mapping.band_width(b) * cfg.channels;
        CHECK(static_cast<int>(masks[b].size()) == 5 * expect);
    }

    SECTION("zero embeddings and zero biases give zero masks") {
        for (auto& v : emb.v) v = 0.0;
        for (auto& mp : params.mask) {
            std::fill(mp.b1.v.begin(), mp.b1.v.end(), 0.0);
            std::fill(mp.b2.v.begin(), mp.b2.v.end(), 0.0);
        }
        auto z = estimate_band_masks(emb, mapping, params);
        for (const auto& bm : z)
            for (double v : bm) CHECK(v == 0.0);
    }

    SECTION("per-band parameter counts track band widths") {
        auto count = [&](int b) {
            size_t n = 0;
            n += params.mask[b].norm_g.size() + params.mask[b].norm_b.size();
            n += params.mask[b].w1.size() + params.mask[b].b1.size();
            n += params.mask[b].w2.size() + params.mask[b].b2.size();
            return n;
        };
        // widths: 6,7,6,6 -> only band 1 differs
        CHECK(count(0) == count(2));
        CHECK(count(0) == count(3));
        const int gated = cfg.gated_mask ? 2 : 1;
        const long per_bin = static_cast<long>(gated) * 2 * cfg.channels *
                             (cfg.mask_hidden() + 1);
        CHECK(static_cast<long>(count(1)) - static_cast<long>(count(0)) ==
              (mapping.band_width(1) - mapping.band_width(0)) * per_bin);
    }
}

TEST_CASE("merge_masks semantics") {
    BandMapping m;
    m.n_bins = 4;
    m.mode = MappingMode::mel_overlapping;
    m.bands = {{0, 1}, {1, 3}};
    const int T = 1, C = 1;

    // band 0 rows: [re0 re1 im0 im1]; band 1: [re1 re2 re3 im1 im2 im3]
    std::vector<std::vector<double>> bm(2);
    bm[0] = {0.2, 0.2, 0.0, 0.0};
    bm[1] = {0.6, 0.5, 0.7, 0.0, 0.0, 0.0};

    auto mask = merge_masks(bm, m, T, C);
    CHECK(mask.re[0] == 0.2);                      // only band 0
    CHECK(mask.re[1] == Catch::Approx(0.4));       // mean of 0.2 and 0.6
    CHECK(mask.re[2] == 0.5);
    CHECK(mask.re[3] == 0.7);

    SECTION("uncovered bin is an error") {
        BandMapping gap;
        gap.n_bins = 4;
        gap.bands = {{0, 1}, {3, 3}};
        std::vector<std::vector<double>> bg(2);
        bg[0] = {0.0, 0.0, 0.0, 0.0};
        bg[1] = {0.0, 0.0};
        CHECK_THROWS_WITH(merge_masks(bg, gap, 1, 1), "bin without band");
    }

    SECTION("merge is exactly homogeneous for power-of-two scalars") {
        auto bm2 = bm;
        for (auto& v : bm2[0]) v *= 2.0;
        for (auto& v : bm2[1]) v *= 2.0;
        auto mask2 = merge_masks(bm2, m, T, C);
        for (size_t i = 0; i < mask.re.size(); ++i)
            CHECK(mask2.re[i] == 2.0 * mask.re[i]);
    }
}

TEST_CASE("merge_masks equals the brute-force oracle on fuzzed mappings") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n_bins = 8 + static_cast<int>(rng() % 40);
        auto m = random_overlapping_mapping(rng, n_bins);
        const int T = 1 + static_cast<int>(rng() % 4);
        const int C = 1 + static_cast<int>(rng() % 2);
        const int B = m.n_bands();
        std::vector<std::vector<double>> bm(B);
        for (int b = 0; b < B; ++b) {
            bm[b].resize(static_cast<size_t>(T) * 2 * m.band_width(b) * C);
            for (auto& v : bm[b]) v = d(rng);
        }
        auto mask = merge_masks(bm, m, T, C);

        // oracle: accumulate per bin from scratch, scanning all bands
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                for (int f = 0; f < n_bins; ++f) {
                    double acc_re = 0, acc_im = 0;
                    int n = 0;
                    for (int b = 0; b < B; ++b) {
                        if (f < m.band_start(b) || f > m.band_end(b)) continue;
                        const int w = m.band_width(b), j = f - m.band_start(b);
                        const int row = 2 * w * C;
                        acc_re += bm[b][t * row + (2 * c) * w + j];
                        acc_im += bm[b][t * row + (2 * c + 1) * w + j];
                        ++n;
                    }
                    REQUIRE(n >= 1);
                    CHECK(n <= 3);
                    worst = std::max(worst,
                                     std::abs(mask.re[mask.idx(c, t, f)] - acc_re / n));
                    worst = std::max(worst,
                                     std::abs(mask.im[mask.idx(c, t, f)] - acc_im / n));
                }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("apply_mask semantics") {
    std::mt19937_64 rng(51);
    auto spec = random_spec(rng, 8, 3, 2);
    auto ones = ComplexMask<double>::zeros(8, 3, 2);
    for (auto& v : ones.re) v = 1.0;

    SECTION("all-ones real mask is the identity") {
        auto out = apply_mask(spec, ones);
        CHECK(out.re == spec.re);
        CHECK(out.im == spec.im);
    }

    SECTION("zero mask silences") {
        auto zero = ComplexMask<double>::zeros(8, 3, 2);
        auto out = apply_mask(spec, zero);
        for (double v : out.re) CHECK(v == 0.0);
        for (double v : out.im) CHECK(v == 0.0);
    }

    SECTION("mask = i rotates by 90 degrees") {
        auto rot = ComplexMask<double>::zeros(8, 3, 2);
        for (auto& v : rot.im) v = 1.0;
        auto out = apply_mask(spec, rot);
        for (size_t i = 0; i < spec.re.size(); ++i) {
            CHECK(out.re[i] == -spec.im[i]);
            CHECK(out.im[i] == spec.re[i]);
        }
    }

    SECTION("shape mismatch is rejected") {
        auto small = ComplexMask<double>::zeros(7, 3, 2);
        CHECK_THROWS_AS(apply_mask(spec, small), InvalidInput);
    }
}

TEST_CASE("full forward: shape, determinism, scalar oracle") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    auto params = Params<double>::build(cfg, mapping);
    params.init(61, InitMode::random);
    std::mt19937_64 rng(62);
    auto spec = random_spec(rng, 16, 5, 2);

    auto mask = model_forward(spec, mapping, params);
    CHECK(mask.bins == 16);
    CHECK(mask.frames == 5);
    CHECK(mask.channels == 2);

    SECTION("bitwise deterministic") {
        auto mask2 = model_forward(spec, mapping, params);
        CHECK(mask.re == mask2.re);
        CHECK(mask.im == mask2.im);
    }

    SECTION("matches the straight-line scalar reimplementation") {
        auto [ore, oim] = o_forward(spec, mapping, params);
        double worst = 0.0;
        for (size_t i = 0; i < mask.re.size(); ++i) {
            worst = std::max(worst, std::abs(mask.re[i] - ore[i]));
            worst = std::max(worst, std::abs(mask.im[i] - oim[i]));
        }
        CHECK(worst <= 1e-9);
    }

    SECTION("untrained model emits the zero mask") {
        params.init(63, InitMode::training);
        auto z = model_forward(spec, mapping, params);
        for (double v : z.re) CHECK(v == 0.0);
        for (double v : z.im) CHECK(v == 0.0);
    }
}

TEST_CASE("shape algebra is total over fuzzed configs") {
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 25; ++trial) {
        const int H = 1 + static_cast<int>(rng() % 2);
        ModelConfig cfg;
        cfg.heads = H;
        cfg.embed_dim = 2 * H * (1 + static_cast<int>(rng() % 3));
        cfg.blocks = 1 + static_cast<int>(rng() % 2);
        cfg.ffn_multiplier = 1 + static_cast<int>(rng() % 3);
        cfg.mask_multiplier = 1 + static_cast<int>(rng() % 3);
        cfg.channels = 1 + static_cast<int>(rng() % 2);
        cfg.gated_mask = (rng() % 2) == 0;
        cfg.norm = (rng() % 2) == 0 ? NormKind::rmsnorm : NormKind::layernorm;
        const int n_bins = 8 + static_cast<int>(rng() % 24);
        auto mapping = random_overlapping_mapping(rng, n_bins);
        const int T = 1 + static_cast<int>(rng() % 5);

        auto params = Params<double>::build(cfg, mapping);
        params.init(trial, InitMode::random);
        auto spec = random_spec(rng, n_bins, T, cfg.channels);
        auto mask = model_forward(spec, mapping, params);
        REQUIRE(mask.bins == n_bins);
        REQUIRE(mask.frames == T);
        REQUIRE(mask.channels == cfg.channels);
    }
}

TEST_CASE("model config validation") {
    ModelConfig cfg;
    cfg.embed_dim = 10;
    cfg.heads = 4;  // 10 % 8 != 0
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = ModelConfig{};
    cfg.blocks = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("identity mask params reproduce the input through masking") {
    auto mapping = tiny_mapping();
    auto cfg = tiny_config();
    auto params = make_identity_mask_params<double>(cfg, mapping);
    std::mt19937_64 rng(81);
    auto spec = random_spec(rng, 16, 5, 2);
    auto mask = model_forward(spec, mapping, params);
    auto est = apply_mask(spec, mask);
    for (size_t i = 0; i < spec.re.size(); ++i) {
        CHECK(est.re[i] == Catch::Approx(spec.re[i]).margin(1e-8));
        CHECK(est.im[i] == Catch::Approx(spec.im[i]).margin(1e-8));
    }
}
