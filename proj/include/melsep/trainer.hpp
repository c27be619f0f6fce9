// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "melsep/bandmap.hpp"
#include "melsep/data_io.hpp"
#include "melsep/eval.hpp"
#include "melsep/model.hpp"
#include "melsep/spectral.hpp"

namespace melsep {

struct LossWeights {
    double spectral = 1.0;
    double waveform = 1.0;
};

struct TrainConfig {
    int steps = 500;
    double lr = 1e-3;
    int batch_size = 1;
    uint64_t seed = 0;
    LossWeights weights;

    void validate() const {
        if (steps < 1) throw InvalidInput("steps must be >= 1");
        if (!(lr >= 0.0)) throw InvalidInput("learning rate must be nonnegative");
        if (batch_size < 1) throw InvalidInput("batch size must be >= 1");
        if (weights.spectral < 0 || weights.waveform < 0 ||
            (weights.spectral == 0 && weights.waveform == 0))
            throw InvalidInput("loss weights must be nonnegative, not both zero");
    }
};

// Mean absolute error over the spectrogram planes plus mean absolute error
// over the waveform samples, weighted.
template <class S>
double loss_value(const ComplexSpectrogram<S>& est_spec,
                  const ComplexSpectrogram<S>& ref_spec,
                  const Channels<S>& est_wave, const Channels<S>& ref_wave,
                  const LossWeights& w) {
    if (est_spec.re.size() != ref_spec.re.size())
        throw InvalidInput("loss: spectrogram shape mismatch");
    double total = 0.0;
    if (w.spectral > 0.0) {
        double acc = 0.0;
        for (size_t i = 0; i < est_spec.re.size(); ++i)
            acc += std::abs(double(est_spec.re[i]) - ref_spec.re[i]) +
                   std::abs(double(est_spec.im[i]) - ref_spec.im[i]);
        total += w.spectral * acc / (2.0 * est_spec.re.size());
    }
    if (w.waveform > 0.0) {
        if (est_wave.size() != ref_wave.size())
            throw InvalidInput("loss: waveform shape mismatch");
        double acc = 0.0;
        size_t count = 0;
        for (size_t c = 0; c < est_wave.size(); ++c) {
            if (est_wave[c].size() != ref_wave[c].size())
                throw InvalidInput("loss: waveform shape mismatch");
            for (size_t i = 0; i < est_wave[c].size(); ++i)
                acc += std::abs(double(est_wave[c][i]) - ref_wave[c][i]);
            count += est_wave[c].size();
        }
        total += w.waveform * acc / count;
    }
    return total;
}

template <class S>
struct SeparationLoss {
    double value = 0.0;
    ComplexSpectrogram<S> grad_spec;  // d loss / d est_spec, both branches
};

// Loss and gradient wrt the estimated spectrogram. The waveform branch is
// resynthesized internally and routed back through the istft adjoint.
template <class S>
SeparationLoss<S> separation_loss(const ComplexSpectrogram<S>& est_spec,
                                  const ComplexSpectrogram<S>& ref_spec,
                                  const Channels<S>& ref_wave,
                                  const LossWeights& w) {
    SeparationLoss<S> out;
    out.grad_spec = ComplexSpectrogram<S>::zeros(
        est_spec.bins, est_spec.frames, est_spec.channels, est_spec.cfg,
        est_spec.orig_len);
    Channels<S> est_wave;
    if (w.waveform > 0.0) est_wave = istft(est_spec);
    out.value = loss_value(est_spec, ref_spec, est_wave, ref_wave, w);

    if (w.spectral > 0.0) {
        const double scale = w.spectral / (2.0 * est_spec.re.size());
        for (size_t i = 0; i < est_spec.re.size(); ++i) {
            const double dr = double(est_spec.re[i]) - ref_spec.re[i];
            const double di = double(est_spec.im[i]) - ref_spec.im[i];
            out.grad_spec.re[i] += static_cast<S>(scale * (dr > 0 ? 1 : (dr < 0 ? -1 : 0)));
            out.grad_spec.im[i] += static_cast<S>(scale * (di > 0 ? 1 : (di < 0 ? -1 : 0)));
        }
    }
    if (w.waveform > 0.0) {
        size_t count = 0;
        for (const auto& ch : ref_wave) count += ch.size();
        const double scale = w.waveform / count;
        Channels<S> gw(est_wave.size());
        for (size_t c = 0; c < est_wave.size(); ++c) {
            gw[c].resize(est_wave[c].size());
            for (size_t i = 0; i < est_wave[c].size(); ++i) {
                const double d = double(est_wave[c][i]) - ref_wave[c][i];
                gw[c][i] = static_cast<S>(scale * (d > 0 ? 1 : (d < 0 ? -1 : 0)));
            }
        }
        auto gs = istft_adjoint(est_spec, gw);
        for (size_t i = 0; i < out.grad_spec.re.size(); ++i) {
            out.grad_spec.re[i] += gs.re[i];
            out.grad_spec.im[i] += gs.im[i];
        }
    }
    return out;
}

template <class S>
struct TrainExample {
    ComplexSpectrogram<S> mix_spec;
    ComplexSpectrogram<S> target_spec;
    Channels<S> target_wave;
};

// Adam with bias correction; moments kept in double regardless of S.
template <class S>
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;

    void init_like(Params<S>& params) {
        m.clear();
        v.clear();
        params.for_each_tensor([&](Tensor<S>& tt) {
            m.emplace_back(tt.size(), 0.0);
            v.emplace_back(tt.size(), 0.0);
        });
        t = 0;
    }

    void step(Params<S>& params, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        size_t idx = 0;
        params.for_each_tensor([&](Tensor<S>& tt) {
            auto& mi = m[idx];
            auto& vi = v[idx];
            for (size_t j = 0; j < tt.size(); ++j) {
                const double g = tt.g[j];
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * g;
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * g * g;
                const double update =
                    lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + eps);
                tt.v[j] -= static_cast<S>(update);
            }
            ++idx;
        });
    }
};

// One optimizer step over the batch; returns the mean loss at the current
// parameters (before the update).
template <class S>
double train_step(const std::vector<TrainExample<S>>& batch,
                  const BandMapping& mapping, Params<S>& params,
                  AdamState<S>& opt, const TrainConfig& cfg) {
    if (batch.empty()) throw InvalidInput("empty batch");
    params.zero_grad();
    double total = 0.0;
    ForwardCache<S> fc;
    for (const auto& ex : batch) {
        auto mask = model_forward(ex.mix_spec, mapping, params, &fc);
        auto est = apply_mask(ex.mix_spec, mask);
        auto loss = separation_loss(est, ex.target_spec, ex.target_wave, cfg.weights);
        total += loss.value;
        const S inv_batch = static_cast<S>(1.0 / batch.size());
        for (auto& g : loss.grad_spec.re) g *= inv_batch;
        for (auto& g : loss.grad_spec.im) g *= inv_batch;
        auto dmask = apply_mask_backward(ex.mix_spec, loss.grad_spec);
        model_backward(mapping, params, fc, dmask);
    }
    total /= batch.size();
    if (!std::isfinite(total)) throw NumericalError("diverged");
    bool grads_ok = true;
    params.for_each_tensor([&](Tensor<S>& tt) {
        if (grads_ok && !all_finite(tt.g)) grads_ok = false;
    });
    if (!grads_ok) throw NumericalError("diverged");
    opt.step(params, cfg.lr);
    return total;
}

struct TrainRecord {
    int step;
    double loss;
};

template <class S>
std::vector<TrainRecord> train_loop(const std::vector<TrainExample<S>>& batch,
                                    const BandMapping& mapping, Params<S>& params,
                                    const TrainConfig& cfg,
                                    std::ostream* loss_csv = nullptr) {
    cfg.validate();
    AdamState<S> opt;
    opt.init_like(params);
    std::vector<TrainRecord> records;
    if (loss_csv) *loss_csv << "step,loss\n";
    for (int s = 0; s < cfg.steps; ++s) {
        const double loss = train_step(batch, mapping, params, opt, cfg);
        records.push_back({s, loss});
        if (loss_csv) *loss_csv << s << ',' << loss << '\n';
        if (s % 50 == 0)
            log_info("step " + std::to_string(s) + " loss " + std::to_string(loss));
    }
    return records;
}

template <class S>
Channels<S> to_channels(const AudioBuffer& buf) {
    Channels<S> out(buf.channels.size());
    for (size_t c = 0; c < buf.channels.size(); ++c)
        out[c].assign(buf.channels[c].begin(), buf.channels[c].end());
    return out;
}

struct OverfitConfig {
    uint64_t fixture_seed = 0;
    double fixture_seconds = 1.0;
    std::string stem = "vocals-like";
    WindowConfig window;
    ModelConfig model;
    MappingMode mode = MappingMode::mel_overlapping;
    int n_bands = 16;
    std::vector<int> boundaries;  // bandsplit mode; empty = mel-spaced default
    TrainConfig train;
    double sdr_floor_db = -100.0;
};

struct OverfitReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double sdr_db = 0.0;
    std::vector<TrainRecord> curve;
};

// Mel-spaced disjoint boundaries, the toy stand-in for a band-split table.
inline std::vector<int> mel_spaced_boundaries(int sample_rate, int fft_size,
                                              int n_bands, int n_bins) {
    const double max_mel = hz_to_mel(sample_rate / 2.0);
    std::vector<int> bounds(n_bands + 1);
    for (int i = 0; i <= n_bands; ++i) {
        const double hz = mel_to_hz(max_mel * i / n_bands);
        bounds[i] = static_cast<int>(std::lround(hz / (double(sample_rate) / fft_size)));
    }
    bounds[0] = 0;
    bounds[n_bands] = n_bins;
    for (int i = 1; i <= n_bands; ++i)
        if (bounds[i] <= bounds[i - 1]) bounds[i] = bounds[i - 1] + 1;
    if (bounds[n_bands] != n_bins) throw InvalidInput("too many bands for bins");
    return bounds;
}

inline BandMapping build_mapping(MappingMode mode, int sample_rate, int fft_size,
                                 int n_bands, int n_bins,
                                 const std::vector<int>& boundaries = {}) {
    if (mode == MappingMode::mel_overlapping) {
        auto m = patch_coverage(binarize(mel_filterbank(sample_rate, fft_size,
                                                        n_bands, n_bins)));
        return m;
    }
    auto bounds = boundaries.empty()
                      ? mel_spaced_boundaries(sample_rate, fft_size, n_bands, n_bins)
                      : boundaries;
    auto m = bandsplit_mapping(bounds, n_bins);
    m.sample_rate = sample_rate;
    m.fft_size = fft_size;
    return m;
}

// Train a small model to reproduce one stem of the synthetic fixture from its
// own mixture, then measure the training-example SDR. A silent estimate is
// reported at the configured floor.
template <class S>
OverfitReport overfit_fixture(const OverfitConfig& oc,
                              Params<S>* out_params = nullptr,
                              BandMapping* out_mapping = nullptr) {
    auto bundle = synth_fixture(oc.fixture_seed, oc.window.sample_rate,
                                oc.fixture_seconds);
    const AudioBuffer* stem = bundle.stem(oc.stem);
    if (!stem) throw InvalidInput("fixture has no stem named " + oc.stem);

    auto mix = to_channels<S>(bundle.mixture);
    auto ref = to_channels<S>(*stem);
    TrainExample<S> ex;
    ex.mix_spec = stft(mix, oc.window);
    ex.target_spec = stft(ref, oc.window);
    ex.target_wave = ref;

    auto mapping = build_mapping(oc.mode, oc.window.sample_rate, oc.window.fft_size,
                                 oc.n_bands, ex.mix_spec.bins, oc.boundaries);
    auto params = Params<S>::build(oc.model, mapping);
    params.init(oc.train.seed, InitMode::training);

    OverfitReport rep;
    rep.curve = train_loop(std::vector<TrainExample<S>>{ex}, mapping, params,
                           oc.train);
    rep.initial_loss = rep.curve.front().loss;
    rep.final_loss = rep.curve.back().loss;

    auto mask = model_forward(ex.mix_spec, mapping, params);
    auto est_wave = istft(apply_mask(ex.mix_spec, mask));
    double est_energy = 0.0;
    for (const auto& ch : est_wave)
        for (S v : ch) est_energy += double(v) * v;
    rep.sdr_db = est_energy < 1e-12 ? oc.sdr_floor_db : sdr(ref, est_wave);

    if (out_params) *out_params = std::move(params);
    if (out_mapping) *out_mapping = std::move(mapping);
    return rep;
}

}  // namespace melsep
