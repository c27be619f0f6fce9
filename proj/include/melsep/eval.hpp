// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "melsep/common.hpp"

namespace melsep {

struct SdrOptions {
    double cap_db = 100.0;      // ceiling for vanishing residuals
    double silence_eps = 1e-12;  // reference-energy threshold for chunk exclusion
};

// Median with the mean-of-middles convention for even counts.
inline double median(std::vector<double> v) {
    if (v.empty()) throw InvalidInput("median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Energy-ratio SDR in dB over all channels. The scale-distortion identity
// sdr(ref, a*ref) = -10*log10((1-a)^2) follows directly.
template <class S>
double sdr(const Channels<S>& ref, const Channels<S>& est,
           const SdrOptions& opt = {}) {
    if (ref.size() != est.size()) throw InvalidInput("sdr: channel count mismatch");
    double e_ref = 0.0, e_res = 0.0;
    for (size_t c = 0; c < ref.size(); ++c) {
        if (ref[c].size() != est[c].size())
            throw InvalidInput("sdr: length mismatch");
        for (size_t i = 0; i < ref[c].size(); ++i) {
            const double r = ref[c][i];
            const double d = r - double(est[c][i]);
            e_ref += r * r;
            e_res += d * d;
        }
    }
    if (e_ref <= 0.0) throw InvalidInput("undefined SDR");
    if (e_res == 0.0) return opt.cap_db;
    return std::min(10.0 * std::log10(e_ref / e_res), opt.cap_db);
}

struct TrackSdr {
    std::vector<double> per_chunk;
    double per_track = 0.0;
};

// Non-overlapping 1 s chunks from sample 0, sub-second tail discarded,
// silent-reference chunks excluded, median over the rest.
template <class S>
TrackSdr chunked_track_sdr(const Channels<S>& ref, const Channels<S>& est,
                           int sample_rate, const SdrOptions& opt = {}) {
    if (ref.empty() || ref[0].size() < static_cast<size_t>(sample_rate))
        throw InvalidInput("chunked_track_sdr: need at least one second");
    if (ref.size() != est.size()) throw InvalidInput("channel count mismatch");
    const long len = static_cast<long>(ref[0].size());
    const long n_chunks = len / sample_rate;

    TrackSdr out;
    for (long k = 0; k < n_chunks; ++k) {
        const long s = k * sample_rate;
        double e_ref = 0.0;
        Channels<S> rc(ref.size()), ec(ref.size());
        for (size_t c = 0; c < ref.size(); ++c) {
            rc[c].assign(ref[c].begin() + s, ref[c].begin() + s + sample_rate);
            ec[c].assign(est[c].begin() + s, est[c].begin() + s + sample_rate);
            for (S v : rc[c]) e_ref += double(v) * v;
        }
        if (e_ref < opt.silence_eps) continue;
        out.per_chunk.push_back(sdr(rc, ec, opt));
    }
    if (out.per_chunk.empty()) throw InvalidInput("all chunks silent");
    out.per_track = median(out.per_chunk);
    return out;
}

inline double dataset_sdr(const std::vector<double>& per_track_medians) {
    return median(per_track_medians);
}

struct SdrReport {
    struct Row {
        std::string track, stem;
        double per_track = 0.0;
        std::vector<double> per_chunk;
    };
    std::vector<Row> rows;
    std::map<std::string, double> dataset;  // per stem

    void finalize() {
        std::map<std::string, std::vector<double>> by_stem;
        for (const auto& r : rows) by_stem[r.stem].push_back(r.per_track);
        dataset.clear();
        for (const auto& [stem, meds] : by_stem) dataset[stem] = dataset_sdr(meds);
    }
};

inline nlohmann::json report_to_json(const SdrReport& rep) {
    nlohmann::json j;
    j["tracks"] = nlohmann::json::array();
    for (const auto& r : rep.rows)
        j["tracks"].push_back({{"track", r.track},
                               {"stem", r.stem},
                               {"per_track_db", r.per_track},
                               {"per_chunk_db", r.per_chunk}});
    j["dataset"] = rep.dataset;
    return j;
}

inline void report_to_csv(const SdrReport& rep, std::ostream& os) {
    os << "track,stem,per_track_db\n";
    for (const auto& r : rep.rows)
        os << r.track << ',' << r.stem << ',' << r.per_track << '\n';
    for (const auto& [stem, db] : rep.dataset) os << "ALL," << stem << ',' << db << '\n';
}

}  // namespace melsep
