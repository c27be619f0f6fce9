// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "melsep/checkpoint.hpp"
#include "melsep/config.hpp"
#include "melsep/data_io.hpp"
#include "melsep/eval.hpp"
#include "melsep/pipeline.hpp"
#include "melsep/trainer.hpp"

namespace fs = std::filesystem;
using namespace melsep;

namespace {

struct MappingArgs {
    int sr = 44100, fft = 2048, bands = 60;
    std::string mode = "mel";
    std::string boundaries_file;
    std::string out;
    std::string csv;
    bool patch = false;
    bool dedupe = false;
    bool drop_nyquist = false;
};

int cmd_mapping(const MappingArgs& a) {
    const int n_bins = a.fft / 2 + (a.drop_nyquist ? 0 : 1);
    BandMapping m;
    if (a.mode == "mel") {
        m = binarize(mel_filterbank(a.sr, a.fft, a.bands, n_bins));
        if (a.patch) m = patch_coverage(m);
        if (a.dedupe) m = dedupe_overlaps(m);
    } else if (a.mode == "bandsplit") {
        if (a.boundaries_file.empty())
            throw InvalidInput("bandsplit mode needs --boundaries");
        m = bandsplit_mapping(load_boundaries_file(a.boundaries_file), n_bins);
        m.sample_rate = a.sr;
        m.fft_size = a.fft;
    } else {
        throw InvalidInput("mode must be 'mel' or 'bandsplit'");
    }
    m.sample_rate = a.sr;
    m.fft_size = a.fft;

    {
        std::ofstream os(a.out);
        if (!os) throw InvalidInput("cannot write " + a.out);
        os << mapping_to_json(m).dump(1) << "\n";
    }
    if (!a.csv.empty()) {
        std::ofstream os(a.csv);
        if (!os) throw InvalidInput("cannot write " + a.csv);
        write_incidence_csv(m, os);
    }

    std::cout << "mode " << mode_name(m.mode) << ", " << m.n_bands() << " bands over "
              << m.n_bins << " bins\n";
    std::cout << "widths:";
    for (int b = 0; b < m.n_bands(); ++b) std::cout << ' ' << m.band_width(b);
    std::cout << "\n";
    if (m.mode == MappingMode::mel_overlapping) {
        auto st = overlap_stats(m);
        int mn = st.shared.empty() ? 0 : *std::min_element(st.shared.begin(),
                                                           st.shared.end());
        int mx = st.shared.empty() ? 0 : *std::max_element(st.shared.begin(),
                                                           st.shared.end());
        std::cout << "adjacent overlap: min " << mn << " max " << mx << " bins\n";
    }
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string config_file;
    long fixture_seed = -1;
    std::string data_dir;
    std::string out = "model.ckpt";
    std::string loss_csv;
    // flag overrides; NaN/-1 means "not set"
    long steps = -1;
    double lr = -1;
    long seed = -1;
    long bands = -1;
    long embed_dim = -1;
    long blocks = -1;
    long heads = -1;
    std::string stem, mode, precision;
};

RunConfig resolve_config(const std::string& config_file) {
    if (config_file.empty()) return RunConfig{};
    return load_run_config(config_file);
}

template <class S>
int run_train(const TrainArgs& a, RunConfig cfg) {
    if (a.fixture_seed < 0 && a.data_dir.empty())
        throw InvalidInput("need --fixture SEED or --data DIR");

    TrackBundle bundle = a.fixture_seed >= 0
                             ? synth_fixture(static_cast<uint64_t>(a.fixture_seed),
                                             cfg.window.sample_rate)
                             : load_track_dir(a.data_dir);
    for (const auto& w : bundle.warnings) log_warn(w);
    const AudioBuffer* stem = bundle.stem(cfg.stem);
    if (!stem) {
        std::string names;
        for (const auto& [n, _] : bundle.stems) names += " " + n;
        throw InvalidInput("no stem '" + cfg.stem + "' in track (have:" + names + ")");
    }
    if (bundle.mixture.sample_rate != cfg.window.sample_rate)
        throw InvalidInput("track sample rate " +
                           std::to_string(bundle.mixture.sample_rate) +
                           " does not match configured " +
                           std::to_string(cfg.window.sample_rate));
    if (bundle.mixture.n_channels() != cfg.model.channels)
        throw InvalidInput("track channel count does not match model config");

    auto mix = to_channels<S>(bundle.mixture);
    auto ref = to_channels<S>(*stem);
    const long chunk_len =
        std::min<long>(static_cast<long>(cfg.chunk_seconds * cfg.window.sample_rate),
                       static_cast<long>(mix[0].size()));
    std::vector<TrainExample<S>> batch;
    for (int k = 0; k < cfg.train.batch_size; ++k) {
        const long start = k * chunk_len;
        if (start + chunk_len > static_cast<long>(mix[0].size())) break;
        Channels<S> mslice(mix.size()), rslice(ref.size());
        for (size_t c = 0; c < mix.size(); ++c) {
            mslice[c].assign(mix[c].begin() + start, mix[c].begin() + start + chunk_len);
            rslice[c].assign(ref[c].begin() + start, ref[c].begin() + start + chunk_len);
        }
        TrainExample<S> ex;
        ex.mix_spec = stft(mslice, cfg.window);
        ex.target_spec = stft(rslice, cfg.window);
        ex.target_wave = rslice;
        batch.push_back(std::move(ex));
    }
    if (batch.empty()) throw InvalidInput("track too short for one training chunk");

    auto mapping = build_mapping(cfg.mapping_mode, cfg.window.sample_rate,
                                 cfg.window.fft_size, cfg.n_bands,
                                 batch[0].mix_spec.bins,
                                 cfg.boundaries_file.empty()
                                     ? std::vector<int>{}
                                     : load_boundaries_file(cfg.boundaries_file));
    auto params = Params<S>::build(cfg.model, mapping);
    params.init(cfg.train.seed, InitMode::training);

    std::ofstream csv;
    if (!a.loss_csv.empty()) {
        csv.open(a.loss_csv);
        if (!csv) throw InvalidInput("cannot write " + a.loss_csv);
    }
    auto records = train_loop(batch, mapping, params, cfg.train,
                              csv.is_open() ? &csv : nullptr);

    CheckpointHeader header;
    header.model = cfg.model;
    header.window = cfg.window;
    header.mapping = mapping;
    header.stem = cfg.stem;
    save_checkpoint(a.out, header, params);

    const double ratio = records.back().loss / records.front().loss;
    std::cout << "steps " << records.size() << ", initial loss "
              << records.front().loss << ", final loss " << records.back().loss
              << ", ratio " << ratio << "\n";
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = resolve_config(a.config_file);
    if (a.steps >= 0) cfg.train.steps = static_cast<int>(a.steps);
    if (a.lr >= 0) cfg.train.lr = a.lr;
    if (a.seed >= 0) cfg.train.seed = static_cast<uint64_t>(a.seed);
    if (a.bands >= 0) cfg.n_bands = static_cast<int>(a.bands);
    if (a.embed_dim >= 0) cfg.model.embed_dim = static_cast<int>(a.embed_dim);
    if (a.blocks >= 0) cfg.model.blocks = static_cast<int>(a.blocks);
    if (a.heads >= 0) cfg.model.heads = static_cast<int>(a.heads);
    if (!a.stem.empty()) cfg.stem = a.stem;
    if (!a.precision.empty()) cfg.precision = a.precision;
    if (!a.mode.empty()) {
        if (a.mode == "mel") cfg.mapping_mode = MappingMode::mel_overlapping;
        else if (a.mode == "bandsplit") cfg.mapping_mode = MappingMode::bandsplit_disjoint;
        else throw InvalidInput("mode must be 'mel' or 'bandsplit'");
    }
    cfg.validate();
    return cfg.precision == "single" ? run_train<float>(a, cfg)
                                     : run_train<double>(a, cfg);
}

struct SeparateArgs {
    std::string ckpt, input, out_dir;
    double chunk_seconds = 4.0;
    int jobs = 1;
};

template <class S>
int run_separate(const SeparateArgs& a, const CheckpointHeader& header) {
    CheckpointHeader h;
    auto params = load_checkpoint<S>(a.ckpt, &h);
    auto wav = load_wav(a.input);
    if (wav.sample_rate != h.window.sample_rate)
        throw InvalidInput("input sample rate " + std::to_string(wav.sample_rate) +
                           " does not match checkpoint " +
                           std::to_string(h.window.sample_rate));
    if (wav.n_channels() != h.model.channels)
        throw InvalidInput("input channel count does not match checkpoint");

    ChunkPlan plan;
    plan.chunk_len = 2 * static_cast<long>(a.chunk_seconds * wav.sample_rate / 2);
    plan.validate(h.window.fft_size);

    auto est = separate_track(to_channels<S>(wav), h.mapping, params, h.window,
                              plan, a.jobs);
    fs::create_directories(a.out_dir);
    AudioBuffer out;
    out.sample_rate = wav.sample_rate;
    out.channels.resize(est.size());
    for (size_t c = 0; c < est.size(); ++c)
        out.channels[c].assign(est[c].begin(), est[c].end());
    const std::string path = a.out_dir + "/" + h.stem + ".wav";
    save_wav(path, out, WavFormat::float32);
    std::cout << "wrote " << path << " (" << out.length() << " samples)\n";
    (void)header;
    return 0;
}

int cmd_separate(const SeparateArgs& a) {
    auto header = read_checkpoint_header(a.ckpt);
    return header.dtype == "f32" ? run_separate<float>(a, header)
                                 : run_separate<double>(a, header);
}

struct EvaluateArgs {
    std::string ref_dir, est_dir;
    std::string out_prefix = "sdr_report";
    std::string stems_csv;
    double cap_db = 100.0;
    int jobs = 1;
};

int cmd_evaluate(const EvaluateArgs& a) {
    if (!fs::is_directory(a.ref_dir)) throw InvalidInput("not a directory: " + a.ref_dir);
    if (!fs::is_directory(a.est_dir)) throw InvalidInput("not a directory: " + a.est_dir);

    std::vector<std::string> want_stems;
    if (!a.stems_csv.empty()) {
        std::stringstream ss(a.stems_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) want_stems.push_back(tok);
    }

    struct Pair {
        std::string track, stem, ref_path, est_path;
    };
    std::vector<Pair> pairs;
    std::vector<std::string> offenders;
    std::vector<std::string> tracks;
    for (const auto& e : fs::directory_iterator(a.ref_dir))
        if (e.is_directory()) tracks.push_back(e.path().filename().string());
    std::sort(tracks.begin(), tracks.end());
    if (tracks.empty()) throw InvalidInput("no track directories in " + a.ref_dir);

    for (const auto& track : tracks) {
        std::vector<std::string> stems;
        for (const auto& e : fs::directory_iterator(fs::path(a.ref_dir) / track)) {
            if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
            const std::string stem = e.path().stem().string();
            if (stem == "mixture") continue;
            if (!want_stems.empty() &&
                std::find(want_stems.begin(), want_stems.end(), stem) ==
                    want_stems.end())
                continue;
            stems.push_back(stem);
        }
        std::sort(stems.begin(), stems.end());
        for (const auto& stem : stems) {
            const auto est_path = fs::path(a.est_dir) / track / (stem + ".wav");
            if (!fs::exists(est_path)) {
                offenders.push_back(track + "/" + stem);
                continue;
            }
            pairs.push_back({track, stem,
                             (fs::path(a.ref_dir) / track / (stem + ".wav")).string(),
                             est_path.string()});
        }
    }
    if (!offenders.empty()) {
        std::cerr << "missing estimates for:";
        for (const auto& o : offenders) std::cerr << ' ' << o;
        std::cerr << "\n";
        return 2;
    }
    if (pairs.empty()) throw InvalidInput("no stem files to evaluate");

    SdrOptions opt;
    opt.cap_db = a.cap_db;
    SdrReport rep;
    rep.rows.resize(pairs.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string fail_msg;
    std::mutex fail_mu;
    auto work = [&] {
        for (size_t i = next.fetch_add(1); i < pairs.size(); i = next.fetch_add(1)) {
            try {
                auto ref = load_wav(pairs[i].ref_path);
                auto est = load_wav(pairs[i].est_path);
                if (ref.sample_rate != est.sample_rate)
                    throw InvalidInput("sample rate mismatch for " + pairs[i].track +
                                       "/" + pairs[i].stem);
                const long n = std::min(ref.length(), est.length());
                for (auto& ch : ref.channels) ch.resize(n);
                for (auto& ch : est.channels) ch.resize(n);
                auto ts = chunked_track_sdr(ref.channels, est.channels,
                                            ref.sample_rate, opt);
                rep.rows[i] = {pairs[i].track, pairs[i].stem, ts.per_track,
                               ts.per_chunk};
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lk(fail_mu);
                failed = true;
                fail_msg = ex.what();
            }
        }
    };
    if (a.jobs <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < a.jobs; ++j) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failed) throw InvalidInput(fail_msg);

    rep.finalize();
    {
        std::ofstream os(a.out_prefix + ".json");
        os << report_to_json(rep).dump(1) << "\n";
    }
    {
        std::ofstream os(a.out_prefix + ".csv");
        report_to_csv(rep, os);
    }
    for (const auto& [stem, db] : rep.dataset)
        std::cout << "dataset median SDR [" << stem << "]: " << db << " dB\n";
    std::cout << "wrote " << a.out_prefix << ".json and " << a.out_prefix << ".csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mel-band projection source separation"};
    app.require_subcommand(1);

    MappingArgs ma;
    auto* mapping = app.add_subcommand("mapping", "construct a bin-to-band mapping");
    mapping->add_option("--sr", ma.sr, "sample rate");
    mapping->add_option("--fft", ma.fft, "fft size");
    mapping->add_option("--bands", ma.bands, "number of bands");
    mapping->add_option("--mode", ma.mode, "mel | bandsplit");
    mapping->add_option("--boundaries", ma.boundaries_file, "boundary json file");
    mapping->add_option("--out", ma.out, "output mapping json")->required();
    mapping->add_option("--csv", ma.csv, "also dump the binary matrix as csv");
    mapping->add_flag("--patch", ma.patch, "apply coverage patching");
    mapping->add_flag("--dedupe", ma.dedupe,
                      "experimental: give overlapped bins to the lower band");
    mapping->add_flag("--drop-nyquist", ma.drop_nyquist,
                      "build over fft/2 bins instead of fft/2+1");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a single-stem model");
    train->add_option("--config", ta.config_file, "json config file");
    train->add_option("--fixture", ta.fixture_seed, "train on the synthetic fixture");
    train->add_option("--data", ta.data_dir, "train on a track directory");
    train->add_option("--out", ta.out, "checkpoint path");
    train->add_option("--loss-csv", ta.loss_csv, "write the loss curve");
    train->add_option("--steps", ta.steps, "optimizer steps");
    train->add_option("--lr", ta.lr, "learning rate");
    train->add_option("--seed", ta.seed, "rng seed");
    train->add_option("--bands", ta.bands, "band count");
    train->add_option("--embed-dim", ta.embed_dim, "embedding dim");
    train->add_option("--blocks", ta.blocks, "transformer blocks");
    train->add_option("--heads", ta.heads, "attention heads");
    train->add_option("--stem", ta.stem, "stem name");
    train->add_option("--mode", ta.mode, "mel | bandsplit");
    train->add_option("--precision", ta.precision, "single | double");

    SeparateArgs sa;
    auto* separate = app.add_subcommand("separate", "separate a mixture wav");
    separate->add_option("--ckpt", sa.ckpt, "checkpoint")->required();
    separate->add_option("--in", sa.input, "input wav")->required();
    separate->add_option("--out", sa.out_dir, "output directory")->required();
    separate->add_option("--chunk-seconds", sa.chunk_seconds, "chunk length");
    separate->add_option("--jobs", sa.jobs, "parallel chunk workers");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "sdr report for est vs ref");
    evaluate->add_option("--ref", ea.ref_dir, "reference root")->required();
    evaluate->add_option("--est", ea.est_dir, "estimate root")->required();
    evaluate->add_option("--out", ea.out_prefix, "report path prefix");
    evaluate->add_option("--stems", ea.stems_csv, "comma-separated stem filter");
    evaluate->add_option("--cap", ea.cap_db, "sdr ceiling in dB");
    evaluate->add_option("--jobs", ea.jobs, "parallel track workers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (mapping->parsed()) return cmd_mapping(ma);
        if (train->parsed()) return cmd_train(ta);
        if (separate->parsed()) return cmd_separate(sa);
        if (evaluate->parsed()) return cmd_evaluate(ea);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
