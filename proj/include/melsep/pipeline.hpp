// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "melsep/bandmap.hpp"
#include "melsep/common.hpp"
#include "melsep/model.hpp"
#include "melsep/spectral.hpp"

namespace melsep {

struct ChunkPlan {
    long chunk_len = 0;  // samples; hop is exactly half

    long hop() const { return chunk_len / 2; }

    void validate(int fft_size) const {
        if (chunk_len < fft_size)
            throw InvalidInput("chunk length must cover at least one fft frame");
        if (chunk_len % 2 != 0)
            throw InvalidInput("chunk length must be even (hop = chunk/2)");
    }
};

template <class S>
struct Chunked {
    std::vector<Channels<S>> chunks;  // each channels x chunk_len
    std::vector<long> positions;
    long orig_len = 0;
};

// Equal-length chunks at half-chunk stride, zero-padded tail.
template <class S>
Chunked<S> chunk(const Channels<S>& wave, const ChunkPlan& plan) {
    if (wave.empty() || wave[0].empty()) throw InvalidInput("chunk: empty waveform");
    const long len = static_cast<long>(wave[0].size());
    const long hop = plan.hop();
    const long n_chunks = len <= plan.chunk_len
                              ? 1
                              : (len - plan.chunk_len + hop - 1) / hop + 1;
    Chunked<S> out;
    out.orig_len = len;
    for (long k = 0; k < n_chunks; ++k) {
        const long start = k * hop;
        Channels<S> ch(wave.size());
        for (size_t c = 0; c < wave.size(); ++c) {
            ch[c].assign(plan.chunk_len, S(0));
            const long n = std::min(plan.chunk_len, len - start);
            for (long i = 0; i < n; ++i) ch[c][i] = wave[c][start + i];
        }
        out.chunks.push_back(std::move(ch));
        out.positions.push_back(start);
    }
    return out;
}

// Every output sample is the arithmetic mean of all chunk samples covering it.
template <class S>
Channels<S> deframe(const std::vector<Channels<S>>& chunks,
                    const std::vector<long>& positions, long out_len) {
    if (chunks.empty() || chunks.size() != positions.size())
        throw InvalidInput("deframe: chunk/position mismatch");
    const size_t n_ch = chunks[0].size();
    const long chunk_len = static_cast<long>(chunks[0][0].size());
    Channels<S> out(n_ch);
    std::vector<int> count(out_len, 0);
    for (auto& ch : out) ch.assign(out_len, S(0));
    for (size_t k = 0; k < chunks.size(); ++k) {
        for (size_t c = 0; c < n_ch; ++c) {
            const auto& src = chunks[k][c];
            for (long i = 0; i < chunk_len; ++i) {
                const long pos = positions[k] + i;
                if (pos < 0 || pos >= out_len) continue;
                out[c][pos] += src[i];
                if (c == 0) ++count[pos];
            }
        }
    }
    for (long i = 0; i < out_len; ++i)
        if (count[i] == 0) throw InvalidInput("deframe: coverage gap");
    for (auto& ch : out)
        for (long i = 0; i < out_len; ++i) ch[i] /= static_cast<S>(count[i]);
    return out;
}

// Per chunk: stft -> mask -> apply -> istft; then overlap-average deframe.
// Chunks are independent; with jobs > 1 they run on a small thread pool and
// are gathered in index order, so results do not depend on jobs.
template <class S>
Channels<S> separate_track(const Channels<S>& wave, const BandMapping& mapping,
                           const Params<S>& params, const WindowConfig& wc,
                           const ChunkPlan& plan, int jobs = 1) {
    plan.validate(wc.fft_size);
    auto ck = chunk(wave, plan);
    std::vector<Channels<S>> processed(ck.chunks.size());

    auto work = [&](size_t k) {
        auto spec = stft(ck.chunks[k], wc);
        auto mask = model_forward(spec, mapping, params);
        processed[k] = istft(apply_mask(spec, mask));
    };
    if (jobs <= 1) {
        for (size_t k = 0; k < ck.chunks.size(); ++k) work(k);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (size_t k = next.fetch_add(1); k < ck.chunks.size();
                     k = next.fetch_add(1))
                    work(k);
            });
        for (auto& th : pool) th.join();
    }
    return deframe(processed, ck.positions, ck.orig_len);
}

}  // namespace melsep
