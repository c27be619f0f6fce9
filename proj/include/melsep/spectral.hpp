// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <complex>
#include <string>
#include <vector>

#include "melsep/common.hpp"
#include "melsep/fft.hpp"

namespace melsep {

enum class WindowKind { hann, rect };

inline std::string window_name(WindowKind w) {
    return w == WindowKind::hann ? "hann" : "rect";
}

inline WindowKind window_from_name(const std::string& s) {
    if (s == "hann") return WindowKind::hann;
    if (s == "rect") return WindowKind::rect;
    throw InvalidInput("unknown window: " + s);
}

struct WindowConfig {
    int fft_size = 2048;
    int hop = 512;
    WindowKind window = WindowKind::hann;
    int sample_rate = 44100;
    // Drop the topmost (Nyquist) bin so the one-sided spectrum has fft_size/2
    // bins instead of fft_size/2+1. Lossy; off by default.
    bool drop_nyquist = false;

    int bins() const { return fft_size / 2 + (drop_nyquist ? 0 : 1); }
    int pad() const { return fft_size / 2; }

    bool operator==(const WindowConfig&) const = default;
};

// Periodic (DFT-even) window, suitable for overlap-add at hop = fft/2^k.
inline std::vector<double> window_weights(const WindowConfig& cfg) {
    std::vector<double> w(cfg.fft_size);
    switch (cfg.window) {
        case WindowKind::hann:
            for (int n = 0; n < cfg.fft_size; ++n)
                w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / cfg.fft_size);
            break;
        case WindowKind::rect:
            std::fill(w.begin(), w.end(), 1.0);
            break;
    }
    return w;
}

// Max relative deviation of the shifted-window sum from its mean, over one
// hop period with full overlap coverage.
inline double cola_deviation(const WindowConfig& cfg) {
    const auto w = window_weights(cfg);
    const int n_shift = cfg.fft_size / cfg.hop;
    std::vector<double> acc(cfg.hop, 0.0);
    for (int j = 0; j < cfg.hop; ++j)
        for (int m = 0; m < n_shift; ++m) acc[j] += w[j + m * cfg.hop];
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= cfg.hop;
    double dev = 0.0;
    for (double a : acc) dev = std::max(dev, std::abs(a - mean));
    return dev / mean;
}

inline void validate_window_config(const WindowConfig& cfg) {
    if (cfg.fft_size < 2 || !is_pow2(cfg.fft_size))
        throw InvalidInput("fft_size must be a power of two >= 2");
    if (cfg.hop < 1 || cfg.hop > cfg.fft_size)
        throw InvalidInput("hop must be in [1, fft_size]");
    if (cfg.fft_size % cfg.hop != 0)
        throw InvalidInput("hop must divide fft_size");
    if (cfg.sample_rate < 1) throw InvalidInput("sample_rate must be positive");
    if (cola_deviation(cfg) > 1e-10)
        throw InvalidInput("window/hop pair does not satisfy constant overlap-add");
}

// Complex spectrogram, planar real/imag, layout [channel][frame][bin],
// bin fastest. Immutable by convention once produced.
template <class S>
struct ComplexSpectrogram {
    int bins = 0;
    int frames = 0;
    int channels = 0;
    long orig_len = 0;  // samples before padding, for exact istft length
    WindowConfig cfg;
    std::vector<S> re, im;

    size_t idx(int c, int t, int f) const {
        return (static_cast<size_t>(c) * frames + t) * bins + f;
    }
    S& at_re(int c, int t, int f) { return re[idx(c, t, f)]; }
    S& at_im(int c, int t, int f) { return im[idx(c, t, f)]; }
    S at_re(int c, int t, int f) const { return re[idx(c, t, f)]; }
    S at_im(int c, int t, int f) const { return im[idx(c, t, f)]; }

    static ComplexSpectrogram zeros(int bins, int frames, int channels,
                                    const WindowConfig& cfg, long orig_len) {
        ComplexSpectrogram s;
        s.bins = bins;
        s.frames = frames;
        s.channels = channels;
        s.orig_len = orig_len;
        s.cfg = cfg;
        s.re.assign(static_cast<size_t>(bins) * frames * channels, S(0));
        s.im.assign(static_cast<size_t>(bins) * frames * channels, S(0));
        return s;
    }

    void check_planes() const {
        const size_t n = static_cast<size_t>(bins) * frames * channels;
        if (re.size() != n || im.size() != n)
            throw InvalidInput("spectrogram plane size mismatch");
    }
};

namespace detail {

// Reflect padding without edge duplication; needs len > pad.
template <class S>
inline S padded_sample(const std::vector<S>& x, long p, int pad) {
    const long len = static_cast<long>(x.size());
    long i = p - pad;
    if (i < 0) i = -i;
    if (i >= len) i = 2 * (len - 1) - i;
    return x[i];
}

}  // namespace detail

template <class S>
ComplexSpectrogram<S> stft(const Channels<S>& wave, const WindowConfig& cfg) {
    validate_window_config(cfg);
    if (wave.empty()) throw InvalidInput("stft: no channels");
    const long len = static_cast<long>(wave[0].size());
    for (const auto& ch : wave) {
        if (static_cast<long>(ch.size()) != len)
            throw InvalidInput("stft: channel length mismatch");
        if (len < cfg.fft_size) throw InvalidInput("input too short");
        if (!all_finite(ch)) throw InvalidInput("non-finite input");
    }
    const int n = cfg.fft_size;
    const int pad = cfg.pad();
    const int frames = static_cast<int>((len + 2L * pad - n) / cfg.hop) + 1;
    const int bins = cfg.bins();
    const auto wd = window_weights(cfg);
    std::vector<S> w(wd.begin(), wd.end());

    auto out = ComplexSpectrogram<S>::zeros(bins, frames, static_cast<int>(wave.size()),
                                            cfg, len);
    std::vector<S> frame(n);
    for (int c = 0; c < out.channels; ++c) {
        for (int t = 0; t < frames; ++t) {
            const long start = static_cast<long>(t) * cfg.hop;
            for (int i = 0; i < n; ++i)
                frame[i] = detail::padded_sample(wave[c], start + i, pad) * w[i];
            auto spec = rfft(frame);
            for (int f = 0; f < bins; ++f) {
                out.at_re(c, t, f) = spec[f].real();
                out.at_im(c, t, f) = spec[f].imag();
            }
        }
    }
    return out;
}

template <class S>
Channels<S> istft(const ComplexSpectrogram<S>& spec) {
    validate_window_config(spec.cfg);
    spec.check_planes();
    const int n = spec.cfg.fft_size;
    const int pad = spec.cfg.pad();
    const int full_bins = n / 2 + 1;
    if (spec.bins != spec.cfg.bins())
        throw InvalidInput("istft: bin count does not match config");
    const long padded_len = static_cast<long>(spec.frames - 1) * spec.cfg.hop + n;
    const auto wd = window_weights(spec.cfg);

    std::vector<double> wsum(padded_len, 0.0);
    for (int t = 0; t < spec.frames; ++t)
        for (int i = 0; i < n; ++i) wsum[static_cast<long>(t) * spec.cfg.hop + i] += wd[i] * wd[i];

    Channels<S> out(spec.channels);
    std::vector<std::complex<S>> bins_full(full_bins);
    for (int c = 0; c < spec.channels; ++c) {
        std::vector<double> acc(padded_len, 0.0);
        for (int t = 0; t < spec.frames; ++t) {
            for (int f = 0; f < spec.bins; ++f)
                bins_full[f] = std::complex<S>(spec.at_re(c, t, f), spec.at_im(c, t, f));
            for (int f = spec.bins; f < full_bins; ++f) bins_full[f] = std::complex<S>(0, 0);
            auto frame = irfft(bins_full, n);
            const long start = static_cast<long>(t) * spec.cfg.hop;
            for (int i = 0; i < n; ++i) acc[start + i] += static_cast<double>(frame[i]) * wd[i];
        }
        out[c].resize(spec.orig_len);
        for (long i = 0; i < spec.orig_len; ++i) {
            const double denom = wsum[pad + i];
            out[c][i] = static_cast<S>(denom > 1e-12 ? acc[pad + i] / denom : 0.0);
        }
    }
    return out;
}

// Adjoint of the linear map istft: grad wrt the spectrogram planes given the
// gradient wrt the output waveform. Shape/config is taken from `like`.
template <class S>
ComplexSpectrogram<S> istft_adjoint(const ComplexSpectrogram<S>& like,
                                    const Channels<S>& grad_wave) {
    validate_window_config(like.cfg);
    if (static_cast<int>(grad_wave.size()) != like.channels)
        throw InvalidInput("istft_adjoint: channel mismatch");
    const int n = like.cfg.fft_size;
    const int pad = like.cfg.pad();
    const long padded_len = static_cast<long>(like.frames - 1) * like.cfg.hop + n;
    const auto wd = window_weights(like.cfg);

    std::vector<double> wsum(padded_len, 0.0);
    for (int t = 0; t < like.frames; ++t)
        for (int i = 0; i < n; ++i) wsum[static_cast<long>(t) * like.cfg.hop + i] += wd[i] * wd[i];

    auto grad = ComplexSpectrogram<S>::zeros(like.bins, like.frames, like.channels,
                                             like.cfg, like.orig_len);
    std::vector<S> gpad(padded_len);
    std::vector<S> gframe(n);
    for (int c = 0; c < like.channels; ++c) {
        if (static_cast<long>(grad_wave[c].size()) != like.orig_len)
            throw InvalidInput("istft_adjoint: waveform length mismatch");
        std::fill(gpad.begin(), gpad.end(), S(0));
        for (long i = 0; i < like.orig_len; ++i) {
            const double denom = wsum[pad + i];
            gpad[pad + i] = static_cast<S>(denom > 1e-12 ? grad_wave[c][i] / denom : S(0));
        }
        for (int t = 0; t < like.frames; ++t) {
            const long start = static_cast<long>(t) * like.cfg.hop;
            for (int i = 0; i < n; ++i) gframe[i] = gpad[start + i] * static_cast<S>(wd[i]);
            auto gspec = rfft(gframe);
            // adjoint of irfft: double the shared bins, keep DC/Nyquist single,
            // all scaled by 1/n
            for (int f = 0; f < like.bins; ++f) {
                const double cf = (f == 0 || f == n / 2) ? 1.0 : 2.0;
                grad.at_re(c, t, f) += static_cast<S>(cf / n) * gspec[f].real();
                grad.at_im(c, t, f) += static_cast<S>(cf / n) * gspec[f].imag();
            }
        }
    }
    return grad;
}

}  // namespace melsep
