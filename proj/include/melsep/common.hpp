// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace melsep {

// Validation failures (bad arguments, malformed files, shape mismatches).
// The CLI maps these to exit code 2.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite activations, diverged training. CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatrixRM<S>>;
template <class S>
using MapMC = Eigen::Map<const MatrixRM<S>>;

template <class S>
inline bool all_finite(const std::vector<S>& v) {
    for (S x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

template <class S>
inline bool all_finite(const S* p, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

// Multichannel waveform: channels[c][sample].
template <class S>
using Channels = std::vector<std::vector<S>>;

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

template <class S>
inline void fill_normal(std::mt19937_64& rng, std::vector<S>& out, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : out) x = static_cast<S>(dist(rng));
}

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("MELSEP_LOG");
        if (!env) return LogLevel::warn;
        std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (lvl <= log_level()) {
        static const char* names[] = {"error", "warn", "info", "debug"};
        std::cerr << "[melsep:" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
    }
}

inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_msg(LogLevel::warn, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, msg); }

namespace detail {

// little-endian scalar io for the wav and checkpoint containers
inline uint32_t rd_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
           uint32_t(p[3]) << 24;
}
inline uint16_t rd_u16(const uint8_t* p) {
    return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}
inline void wr_u32(std::ostream& os, uint32_t v) {
    const uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                          uint8_t(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void wr_u16(std::ostream& os, uint16_t v) {
    const uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
inline uint32_t rd_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
}

}  // namespace detail

}  // namespace melsep
