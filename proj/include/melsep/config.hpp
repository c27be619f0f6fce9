// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "melsep/bandmap.hpp"
#include "melsep/model.hpp"
#include "melsep/spectral.hpp"
#include "melsep/trainer.hpp"

namespace melsep {

// One flat config document shared by train/separate/evaluate. Flags override
// file values; unknown keys are rejected.
struct RunConfig {
    WindowConfig window;
    ModelConfig model;
    MappingMode mapping_mode = MappingMode::mel_overlapping;
    int n_bands = 60;
    std::string boundaries_file;
    double chunk_seconds = 4.0;
    std::string stem = "vocals-like";
    std::string precision = "double";  // single | double
    TrainConfig train;
    double sdr_cap_db = 100.0;

    void validate() const {
        validate_window_config(window);
        model.validate();
        train.validate();
        if (precision != "single" && precision != "double")
            throw InvalidInput("precision must be 'single' or 'double'");
        if (chunk_seconds <= 0) throw InvalidInput("chunk_seconds must be positive");
        if (n_bands < 2) throw InvalidInput("n_bands must be >= 2");
    }
};

inline RunConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "sample_rate",    "fft_size",       "hop",
        "window",         "drop_nyquist",   "n_bands",
        "mapping_mode",   "boundaries_file", "embed_dim",
        "heads",          "blocks",         "ffn_multiplier",
        "mask_multiplier", "norm",          "gated_mask",
        "channels",       "chunk_seconds",  "stem",
        "precision",      "steps",          "lr",
        "batch_size",     "seed",           "spectral_weight",
        "waveform_weight", "sdr_cap_db"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw InvalidInput("unknown config key: " + key);

    RunConfig c;
    try {
        c.window.sample_rate = j.value("sample_rate", c.window.sample_rate);
        c.window.fft_size = j.value("fft_size", c.window.fft_size);
        c.window.hop = j.value("hop", c.window.hop);
        if (j.contains("window"))
            c.window.window = window_from_name(j.at("window").get<std::string>());
        c.window.drop_nyquist = j.value("drop_nyquist", false);
        c.n_bands = j.value("n_bands", c.n_bands);
        if (j.contains("mapping_mode")) {
            const std::string m = j.at("mapping_mode");
            if (m == "mel") c.mapping_mode = MappingMode::mel_overlapping;
            else if (m == "bandsplit") c.mapping_mode = MappingMode::bandsplit_disjoint;
            else throw InvalidInput("mapping_mode must be 'mel' or 'bandsplit'");
        }
        c.boundaries_file = j.value("boundaries_file", std::string());
        c.model.embed_dim = j.value("embed_dim", c.model.embed_dim);
        c.model.heads = j.value("heads", c.model.heads);
        c.model.blocks = j.value("blocks", c.model.blocks);
        c.model.ffn_multiplier = j.value("ffn_multiplier", c.model.ffn_multiplier);
        c.model.mask_multiplier = j.value("mask_multiplier", c.model.mask_multiplier);
        if (j.contains("norm"))
            c.model.norm = norm_from_name(j.at("norm").get<std::string>());
        c.model.gated_mask = j.value("gated_mask", true);
        c.model.channels = j.value("channels", c.model.channels);
        c.chunk_seconds = j.value("chunk_seconds", c.chunk_seconds);
        c.stem = j.value("stem", c.stem);
        c.precision = j.value("precision", c.precision);
        c.train.steps = j.value("steps", c.train.steps);
        c.train.lr = j.value("lr", c.train.lr);
        c.train.batch_size = j.value("batch_size", c.train.batch_size);
        c.train.seed = j.value("seed", c.train.seed);
        c.train.weights.spectral = j.value("spectral_weight", 1.0);
        c.train.weights.waveform = j.value("waveform_weight", 1.0);
        c.sdr_cap_db = j.value("sdr_cap_db", c.sdr_cap_db);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config type error: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline std::vector<int> load_boundaries_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open boundaries file: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return j.at("boundaries").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("boundaries parse error: ") + e.what());
    }
}

}  // namespace melsep
