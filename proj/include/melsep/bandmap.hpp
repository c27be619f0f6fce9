// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "melsep/common.hpp"

namespace melsep {

// Slaney-variant mel scale: linear below 1 kHz at 3/200 mel per Hz,
// logarithmic above with a ratio of 6.4 per 27 mels.
inline double hz_to_mel(double f) {
    if (f < 0.0) throw InvalidInput("hz_to_mel: negative frequency");
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;  // 15
    const double logstep = std::log(6.4) / 27.0;
    if (f < min_log_hz) return f / f_sp;
    return min_log_mel + std::log(f / min_log_hz) / logstep;
}

inline double mel_to_hz(double m) {
    if (m < 0.0) throw InvalidInput("mel_to_hz: negative mel");
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_mel = 15.0;
    const double logstep = std::log(6.4) / 27.0;
    if (m < min_log_mel) return m * f_sp;
    return 1000.0 * std::exp(logstep * (m - min_log_mel));
}

// Triangle filterbank with centers equally spaced on the Slaney mel scale
// from 0 Hz to Nyquist, area-normalized. Always double: bin membership
// decisions must not depend on the model's precision mode.
struct FilterbankWeights {
    int n_bands = 0;
    int n_bins = 0;
    int sample_rate = 0;
    int fft_size = 0;
    std::vector<double> w;           // row-major B x F
    std::vector<double> centers_hz;  // band centers (interior mel points)

    double at(int b, int f) const { return w[static_cast<size_t>(b) * n_bins + f]; }
};

inline FilterbankWeights mel_filterbank(int sample_rate, int fft_size, int n_bands,
                                        int n_bins_override = 0) {
    if (n_bands < 2) throw InvalidInput("mel_filterbank: need at least 2 bands");
    if (fft_size < 2 || fft_size % 2 != 0)
        throw InvalidInput("mel_filterbank: fft_size must be even");
    const int n_bins = n_bins_override > 0 ? n_bins_override : fft_size / 2 + 1;
    if (n_bands >= n_bins) throw InvalidInput("more bands than bins");

    const double max_mel = hz_to_mel(sample_rate / 2.0);
    const int n_pts = n_bands + 2;
    std::vector<double> hz_pts(n_pts);
    const double step = max_mel / (n_pts - 1);
    for (int i = 0; i < n_pts; ++i) hz_pts[i] = mel_to_hz(i * step);
    hz_pts[n_pts - 1] = mel_to_hz(max_mel);

    FilterbankWeights fb;
    fb.n_bands = n_bands;
    fb.n_bins = n_bins;
    fb.sample_rate = sample_rate;
    fb.fft_size = fft_size;
    fb.w.assign(static_cast<size_t>(n_bands) * n_bins, 0.0);
    fb.centers_hz.assign(hz_pts.begin() + 1, hz_pts.end() - 1);

    const double bin_hz = static_cast<double>(sample_rate) / fft_size;
    for (int b = 0; b < n_bands; ++b) {
        const double lo = hz_pts[b], mid = hz_pts[b + 1], hi = hz_pts[b + 2];
        const double enorm = 2.0 / (hi - lo);
        for (int f = 0; f < n_bins; ++f) {
            const double fr = f * bin_hz;
            const double lower = (fr - lo) / (mid - lo);
            const double upper = (hi - fr) / (hi - mid);
            const double v = std::max(0.0, std::min(lower, upper));
            fb.w[static_cast<size_t>(b) * n_bins + f] = v * enorm;
        }
    }
    return fb;
}

enum class MappingMode { mel_overlapping, bandsplit_disjoint };

inline std::string mode_name(MappingMode m) {
    return m == MappingMode::mel_overlapping ? "mel-overlapping" : "bandsplit-disjoint";
}

inline MappingMode mode_from_name(const std::string& s) {
    if (s == "mel-overlapping") return MappingMode::mel_overlapping;
    if (s == "bandsplit-disjoint") return MappingMode::bandsplit_disjoint;
    throw InvalidInput("unknown mapping mode: " + s);
}

// Binary bin->band incidence. Each band's bin set is a contiguous index
// interval, so bands are stored as inclusive [start, end] ranges.
struct BandMapping {
    MappingMode mode = MappingMode::mel_overlapping;
    int sample_rate = 0;
    int fft_size = 0;
    int n_bins = 0;
    bool patched = false;
    std::vector<std::pair<int, int>> bands;  // inclusive ranges

    int n_bands() const { return static_cast<int>(bands.size()); }
    int band_start(int b) const { return bands[b].first; }
    int band_end(int b) const { return bands[b].second; }
    int band_width(int b) const { return bands[b].second - bands[b].first + 1; }
    bool incidence(int b, int f) const {
        return f >= bands[b].first && f <= bands[b].second;
    }

    std::vector<std::vector<int>> bins_per_band() const {
        std::vector<std::vector<int>> out(bands.size());
        for (size_t b = 0; b < bands.size(); ++b)
            for (int f = bands[b].first; f <= bands[b].second; ++f) out[b].push_back(f);
        return out;
    }

    // bands covering each bin, in band order
    std::vector<std::vector<int>> coverage() const {
        std::vector<std::vector<int>> cov(n_bins);
        for (int b = 0; b < n_bands(); ++b)
            for (int f = bands[b].first; f <= bands[b].second; ++f) cov[f].push_back(b);
        return cov;
    }

    bool fully_covered() const {
        for (const auto& c : coverage())
            if (c.empty()) return false;
        return true;
    }

    void validate() const {
        if (bands.empty()) throw InvalidInput("mapping has no bands");
        for (const auto& [s, e] : bands)
            if (s < 0 || e >= n_bins || s > e)
                throw InvalidInput("band range out of bounds");
        if (mode == MappingMode::bandsplit_disjoint) {
            for (size_t b = 0; b + 1 < bands.size(); ++b)
                if (bands[b + 1].first != bands[b].second + 1)
                    throw InvalidInput("disjoint mapping must partition the bins");
        }
    }
};

inline BandMapping binarize(const FilterbankWeights& fb) {
    BandMapping m;
    m.mode = MappingMode::mel_overlapping;
    m.sample_rate = fb.sample_rate;
    m.fft_size = fb.fft_size;
    m.n_bins = fb.n_bins;
    m.bands.reserve(fb.n_bands);
    for (int b = 0; b < fb.n_bands; ++b) {
        int first = -1, last = -1;
        for (int f = 0; f < fb.n_bins; ++f) {
            if (fb.at(b, f) > 0.0) {
                if (first < 0) first = f;
                last = f;
            }
        }
        if (first < 0) throw InvalidInput("band " + std::to_string(b) + " is empty");
        for (int f = first; f <= last; ++f)
            if (!(fb.at(b, f) > 0.0))
                throw InvalidInput("band support is not contiguous");
        m.bands.emplace_back(first, last);
    }
    m.validate();
    return m;
}

// Assign uncovered bins to the nearest band by bin index (ties to the lower
// band). Triangle edges leave DC and possibly Nyquist with zero weight.
inline BandMapping patch_coverage(const BandMapping& mapping) {
    BandMapping m = mapping;
    const auto cov = m.coverage();
    for (int f = 0; f < m.n_bins; ++f) {
        if (!cov[f].empty()) continue;
        int best = -1;
        long best_d = -1;
        for (int b = 0; b < m.n_bands(); ++b) {
            long d = 0;
            if (f < m.bands[b].first) d = m.bands[b].first - f;
            else if (f > m.bands[b].second) d = f - m.bands[b].second;
            if (best < 0 || d < best_d) {
                best = b;
                best_d = d;
            }
        }
        if (f < m.bands[best].first) m.bands[best].first = f;
        if (f > m.bands[best].second) m.bands[best].second = f;
    }
    m.patched = true;
    m.validate();
    return m;
}

inline BandMapping bandsplit_mapping(const std::vector<int>& boundaries, int n_bins) {
    if (boundaries.size() < 2) throw InvalidInput("need at least 2 boundaries");
    if (boundaries.front() != 0) throw InvalidInput("boundaries must start at 0");
    if (boundaries.back() != n_bins)
        throw InvalidInput("boundaries must end at the bin count");
    for (size_t i = 1; i < boundaries.size(); ++i)
        if (boundaries[i] <= boundaries[i - 1])
            throw InvalidInput("boundaries must be strictly increasing");
    BandMapping m;
    m.mode = MappingMode::bandsplit_disjoint;
    m.n_bins = n_bins;
    m.patched = true;
    for (size_t i = 0; i + 1 < boundaries.size(); ++i)
        m.bands.emplace_back(boundaries[i], boundaries[i + 1] - 1);
    m.validate();
    return m;
}

struct OverlapStats {
    std::vector<int> shared;  // bins shared by bands (b, b+1)
    std::vector<int> widths;
};

inline OverlapStats overlap_stats(const BandMapping& m) {
    if (m.mode != MappingMode::mel_overlapping)
        throw InvalidInput("no overlap stats for partition");
    OverlapStats st;
    for (int b = 0; b < m.n_bands(); ++b) st.widths.push_back(m.band_width(b));
    for (int b = 0; b + 1 < m.n_bands(); ++b)
        st.shared.push_back(std::max(0, m.band_end(b) - m.band_start(b + 1) + 1));
    return st;
}

// Experimental: resolve overlaps by giving shared bins to the lower band.
// The result is a partition, so its mode is bandsplit-disjoint.
inline BandMapping dedupe_overlaps(const BandMapping& mapping) {
    BandMapping m = mapping;
    for (int b = 1; b < m.n_bands(); ++b) {
        if (m.bands[b].first <= m.bands[b - 1].second)
            m.bands[b].first = m.bands[b - 1].second + 1;
        if (m.bands[b].first > m.bands[b].second)
            throw InvalidInput("dedupe produced an empty band");
    }
    m.mode = MappingMode::bandsplit_disjoint;
    m.validate();
    return m;
}

inline nlohmann::json mapping_to_json(const BandMapping& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["mode"] = mode_name(m.mode);
    j["sample_rate"] = m.sample_rate;
    j["fft_size"] = m.fft_size;
    j["n_bands"] = m.n_bands();
    j["n_bins"] = m.n_bins;
    j["patched"] = m.patched;
    auto bands = nlohmann::json::array();
    for (const auto& [s, e] : m.bands) bands.push_back({s, e});
    j["bands"] = bands;
    return j;
}

inline BandMapping mapping_from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw InvalidInput("unsupported mapping file version");
    BandMapping m;
    m.mode = mode_from_name(j.at("mode").get<std::string>());
    m.sample_rate = j.value("sample_rate", 0);
    m.fft_size = j.value("fft_size", 0);
    m.n_bins = j.at("n_bins").get<int>();
    m.patched = j.value("patched", false);
    for (const auto& b : j.at("bands"))
        m.bands.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
    if (static_cast<int>(m.bands.size()) != j.at("n_bands").get<int>())
        throw InvalidInput("mapping band count mismatch");
    m.validate();
    return m;
}

inline void write_incidence_csv(const BandMapping& m, std::ostream& os) {
    for (int b = 0; b < m.n_bands(); ++b) {
        for (int f = 0; f < m.n_bins; ++f) {
            if (f) os << ',';
            os << (m.incidence(b, f) ? 1 : 0);
        }
        os << '\n';
    }
}

}  // namespace melsep
