// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "melsep/common.hpp"

namespace melsep {

struct AudioBuffer {
    std::vector<std::vector<double>> channels;
    int sample_rate = 0;

    long length() const {
        return channels.empty() ? 0 : static_cast<long>(channels[0].size());
    }
    int n_channels() const { return static_cast<int>(channels.size()); }
};

enum class WavFormat { pcm16, float32 };

// RIFF/WAVE reader for PCM16, PCM24 and float32. Samples are normalized to
// [-1, 1]; integer full scale maps k to k/2^(bits-1).
inline AudioBuffer load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open wav file: " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
        std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
        throw InvalidInput("corrupt wav header: " + path);

    uint16_t fmt_code = 0, n_ch = 0, bits = 0;
    uint32_t sr = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;
    size_t off = 12;
    while (off + 8 <= raw.size()) {
        const char* tag = reinterpret_cast<const char*>(raw.data() + off);
        const uint32_t sz = detail::rd_u32(raw.data() + off + 4);
        const uint8_t* body = raw.data() + off + 8;
        if (off + 8 + sz > raw.size()) throw InvalidInput("corrupt wav chunk: " + path);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (sz < 16) throw InvalidInput("corrupt wav fmt chunk: " + path);
            fmt_code = detail::rd_u16(body);
            n_ch = detail::rd_u16(body + 2);
            sr = detail::rd_u32(body + 4);
            bits = detail::rd_u16(body + 14);
            if (fmt_code == 0xFFFE) {
                if (sz < 40) throw InvalidInput("corrupt wav fmt chunk: " + path);
                fmt_code = detail::rd_u16(body + 24);  // subformat GUID leads with it
            }
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data = body;
            data_len = sz;
        }
        off += 8 + sz + (sz & 1);
    }
    if (!data || n_ch == 0 || sr == 0) throw InvalidInput("corrupt wav header: " + path);

    const bool is_float = fmt_code == 3;
    if (!(fmt_code == 1 || is_float)) throw InvalidInput("unsupported codec: " + path);
    if (is_float && bits != 32) throw InvalidInput("unsupported codec: " + path);
    if (!is_float && bits != 16 && bits != 24)
        throw InvalidInput("unsupported codec: " + path);

    const size_t bytes_per = bits / 8;
    const size_t n_frames = data_len / (bytes_per * n_ch);
    AudioBuffer buf;
    buf.sample_rate = static_cast<int>(sr);
    buf.channels.assign(n_ch, std::vector<double>(n_frames));
    for (size_t i = 0; i < n_frames; ++i) {
        for (int c = 0; c < n_ch; ++c) {
            const uint8_t* p = data + (i * n_ch + c) * bytes_per;
            double v;
            if (is_float) {
                float f;
                std::memcpy(&f, p, 4);
                v = f;
            } else if (bits == 16) {
                const int16_t s = static_cast<int16_t>(detail::rd_u16(p));
                v = s / 32768.0;
            } else {
                int32_t s = int32_t(p[0]) | int32_t(p[1]) << 8 | int32_t(p[2]) << 16;
                if (s & 0x800000) s |= ~0xFFFFFF;
                v = s / 8388608.0;
            }
            if (!std::isfinite(v)) throw InvalidInput("non-finite samples: " + path);
            buf.channels[c][i] = v;
        }
    }
    return buf;
}

inline void save_wav(const std::string& path, const AudioBuffer& buf,
                     WavFormat fmt = WavFormat::float32) {
    if (buf.channels.empty()) throw InvalidInput("save_wav: no channels");
    for (const auto& ch : buf.channels) {
        if (static_cast<long>(ch.size()) != buf.length())
            throw InvalidInput("save_wav: ragged channels");
        if (!all_finite(ch)) throw InvalidInput("save_wav: non-finite samples");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidInput("cannot write wav file: " + path);
    const int n_ch = buf.n_channels();
    const long n = buf.length();
    const int bytes_per = fmt == WavFormat::float32 ? 4 : 2;
    const uint32_t data_len = static_cast<uint32_t>(n * n_ch * bytes_per);

    os.write("RIFF", 4);
    detail::wr_u32(os, 36 + data_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::wr_u32(os, 16);
    detail::wr_u16(os, fmt == WavFormat::float32 ? 3 : 1);
    detail::wr_u16(os, static_cast<uint16_t>(n_ch));
    detail::wr_u32(os, static_cast<uint32_t>(buf.sample_rate));
    detail::wr_u32(os, static_cast<uint32_t>(buf.sample_rate * n_ch * bytes_per));
    detail::wr_u16(os, static_cast<uint16_t>(n_ch * bytes_per));
    detail::wr_u16(os, static_cast<uint16_t>(8 * bytes_per));
    os.write("data", 4);
    detail::wr_u32(os, data_len);
    for (long i = 0; i < n; ++i)
        for (int c = 0; c < n_ch; ++c) {
            const double v = buf.channels[c][i];
            if (fmt == WavFormat::float32) {
                const float f = static_cast<float>(v);
                os.write(reinterpret_cast<const char*>(&f), 4);
            } else {
                const long q = std::lround(v * 32768.0);
                const int16_t s = static_cast<int16_t>(std::clamp(q, -32768L, 32767L));
                detail::wr_u16(os, static_cast<uint16_t>(s));
            }
        }
}

struct TrackBundle {
    std::string name;
    AudioBuffer mixture;
    std::vector<std::pair<std::string, AudioBuffer>> stems;
    std::vector<std::string> warnings;

    const AudioBuffer* stem(const std::string& n) const {
        for (const auto& [s, b] : stems)
            if (s == n) return &b;
        return nullptr;
    }
};

// MUSDB-style layout: <dir>/mixture.wav plus one wav per stem.
inline TrackBundle load_track_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw InvalidInput("not a directory: " + dir);
    TrackBundle tb;
    tb.name = fs::path(dir).filename().string();
    std::vector<std::string> stem_files;
    bool have_mixture = false;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
        if (e.path().filename() == "mixture.wav")
            have_mixture = true;
        else
            stem_files.push_back(e.path().stem().string());
    }
    if (!have_mixture) throw InvalidInput("missing mixture.wav in " + dir);
    if (stem_files.empty()) throw InvalidInput("no stem wav files in " + dir);
    std::sort(stem_files.begin(), stem_files.end());

    tb.mixture = load_wav(dir + "/mixture.wav");
    long min_len = tb.mixture.length();
    for (const auto& s : stem_files) {
        auto b = load_wav(dir + "/" + s + ".wav");
        if (b.sample_rate != tb.mixture.sample_rate)
            throw InvalidInput("sample rate mismatch for stem " + s);
        min_len = std::min(min_len, b.length());
        tb.stems.emplace_back(s, std::move(b));
    }
    bool truncated = tb.mixture.length() != min_len;
    for (auto& ch : tb.mixture.channels) ch.resize(min_len);
    for (auto& [s, b] : tb.stems) {
        truncated |= b.length() != min_len;
        for (auto& ch : b.channels) ch.resize(min_len);
    }
    if (truncated)
        tb.warnings.push_back("stem lengths differ; truncated to " +
                              std::to_string(min_len) + " samples");
    return tb;
}

// Deterministic two-stem synthetic fixture. The stems are additive partial
// clusters in disjoint frequency regions: "bass-like" below 1 kHz,
// "vocals-like" above 2 kHz (AM sidebands stay inside the gap). The mixture
// is the exact per-sample sum, and stem energies match within ~1 dB.
inline TrackBundle synth_fixture(uint64_t seed, int sample_rate = 44100,
                                 double duration_s = 1.0) {
    if (duration_s < 1.0) throw InvalidInput("fixture duration must be >= 1 s");
    const long n = static_cast<long>(duration_s * sample_rate);
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    struct Partial {
        double f, amp, phase, am_rate, am_depth, am_phase, gain_l, gain_r;
    };
    auto draw = [&](int count, double f_lo, double f_hi, double am_lo,
                    double am_hi) {
        std::vector<Partial> ps(count);
        for (auto& p : ps) {
            p.f = f_lo + (f_hi - f_lo) * uni(rng);
            p.amp = 0.4 + 0.6 * uni(rng);
            p.phase = 2.0 * M_PI * uni(rng);
            p.am_rate = am_lo + (am_hi - am_lo) * uni(rng);
            p.am_depth = 0.2 + 0.2 * uni(rng);
            p.am_phase = 2.0 * M_PI * uni(rng);
            p.gain_l = 0.8 + 0.2 * uni(rng);
            p.gain_r = 0.8 + 0.2 * uni(rng);
        }
        return ps;
    };
    auto render = [&](const std::vector<Partial>& ps) {
        AudioBuffer b;
        b.sample_rate = sample_rate;
        b.channels.assign(2, std::vector<double>(n, 0.0));
        for (const auto& p : ps)
            for (long i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sample_rate;
                const double env =
                    1.0 + p.am_depth * std::sin(2.0 * M_PI * p.am_rate * t + p.am_phase);
                const double s = p.amp * env * std::sin(2.0 * M_PI * p.f * t + p.phase);
                b.channels[0][i] += p.gain_l * s;
                b.channels[1][i] += p.gain_r * s;
            }
        return b;
    };
    auto normalize_rms = [&](AudioBuffer& b, double target) {
        double e = 0.0;
        long cnt = 0;
        for (const auto& ch : b.channels) {
            for (double v : ch) e += v * v;
            cnt += static_cast<long>(ch.size());
        }
        const double scale = target / std::sqrt(e / cnt);
        for (auto& ch : b.channels)
            for (auto& v : ch) v *= scale;
    };

    auto bass = render(draw(5, 70.0, 850.0, 0.3, 2.0));
    auto vocals = render(draw(12, 2300.0, 7800.0, 1.0, 6.0));
    normalize_rms(bass, 0.08);
    normalize_rms(vocals, 0.08 * (0.9 + 0.2 * uni(rng)));

    TrackBundle tb;
    tb.name = "fixture-" + std::to_string(seed);
    tb.mixture.sample_rate = sample_rate;
    tb.mixture.channels.assign(2, std::vector<double>(n));
    for (int c = 0; c < 2; ++c)
        for (long i = 0; i < n; ++i)
            tb.mixture.channels[c][i] = bass.channels[c][i] + vocals.channels[c][i];
    tb.stems.emplace_back("bass-like", std::move(bass));
    tb.stems.emplace_back("vocals-like", std::move(vocals));
    return tb;
}

}  // namespace melsep
