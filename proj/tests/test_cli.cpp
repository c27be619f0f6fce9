// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "melsep/checkpoint.hpp"
#include "melsep/data_io.hpp"
#include "melsep/trainer.hpp"

using namespace melsep;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(MELSEP_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("melsep_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

const std::string kConfigs = MELSEP_CONFIG_DIR;

}  // namespace

TEST_CASE("checkpoint round trip preserves header and tensors bitwise") {
    auto dir = temp_dir("ckpt");
    BandMapping mapping;
    mapping.n_bins = 16;
    mapping.patched = true;
    mapping.bands = {{0, 5}, {3, 9}, {7, 12}, {10, 15}};
    ModelConfig mc;
    mc.embed_dim = 8;
    mc.heads = 2;
    mc.blocks = 1;
    mc.channels = 2;
    auto params = Params<double>::build(mc, mapping);
    params.init(3, InitMode::random);

    CheckpointHeader h;
    h.model = mc;
    h.mapping = mapping;
    h.stem = "vocals-like";
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(path, h, params);

    CheckpointHeader h2;
    auto loaded = load_checkpoint<double>(path, &h2);
    CHECK(h2.stem == "vocals-like");
    CHECK(h2.model.embed_dim == 8);
    CHECK(h2.mapping.bands == mapping.bands);
    CHECK(h2.dtype == "f64");
    bool equal = true;
    size_t idx = 0;
    std::vector<std::vector<double>> orig;
    params.for_each_tensor([&](Tensor<double>& t) { orig.push_back(t.v); });
    loaded.for_each_tensor([&](Tensor<double>& t) {
        if (t.v != orig[idx++]) equal = false;
    });
    CHECK(equal);

    SECTION("dtype mismatch is rejected") {
        CHECK_THROWS_AS(load_checkpoint<float>(path, nullptr), InvalidInput);
    }
    SECTION("corrupt file is rejected") {
        std::ofstream os(dir / "junk.ckpt", std::ios::binary);
        os << "definitely not a checkpoint";
        os.close();
        CHECK_THROWS_AS(read_checkpoint_header((dir / "junk.ckpt").string()),
                        InvalidInput);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli mapping reproduces the published 16-band example") {
    auto dir = temp_dir("map");
    auto r = run_cli("mapping --sr 44100 --fft 2048 --bands 16 --mode mel --out " +
                     (dir / "m.json").string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(dir / "m.json");
    nlohmann::json j;
    in >> j;
    CHECK(j["bands"][0] == nlohmann::json({1, 21}));
    CHECK(j["bands"][1] == nlohmann::json({11, 32}));
    CHECK(j["mode"] == "mel-overlapping");
    fs::remove_all(dir);
}

TEST_CASE("cli mapping bandsplit writes a disjoint partition") {
    auto dir = temp_dir("map_bs");
    auto r = run_cli("mapping --mode bandsplit --fft 2048 --boundaries " + kConfigs +
                     "/bandsplit62.json --out " + (dir / "bs.json").string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(dir / "bs.json");
    nlohmann::json j;
    in >> j;
    CHECK(j["mode"] == "bandsplit-disjoint");
    CHECK(j["n_bands"] == 62);
    auto m = mapping_from_json(j);
    for (const auto& cov : m.coverage()) CHECK(cov.size() == 1);
    fs::remove_all(dir);
}

TEST_CASE("cli mapping usage errors exit 2") {
    auto r = run_cli("mapping --bands 0 --out /tmp/should_not_exist_melsep.json");
    CHECK(r.exit_code == 2);
    auto r2 = run_cli("mapping");  // missing required --out
    CHECK(r2.exit_code == 2);
    auto r3 = run_cli("mapping --mode bandsplit --out /tmp/x.json");
    CHECK(r3.exit_code == 2);  // bandsplit without boundaries
}

TEST_CASE("cli train on the fixture writes checkpoint and loss curve") {
    auto dir = temp_dir("train");
    const std::string common =
        "train --fixture 0 --bands 8 --embed-dim 16 --blocks 1 ";
    auto r = run_cli(common + "--steps 2 --out " + (dir / "m.ckpt").string() +
                     " --loss-csv " + (dir / "loss.csv").string());
    INFO(r.out);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(dir / "m.ckpt"));
    const std::string csv = read_file(dir / "loss.csv");
    CHECK(csv.rfind("step,loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    SECTION("single step also writes a checkpoint") {
        auto r1 = run_cli(common + "--steps 1 --out " + (dir / "one.ckpt").string());
        REQUIRE(r1.exit_code == 0);
        CHECK(fs::exists(dir / "one.ckpt"));
    }

    SECTION("identical seeds give byte-identical checkpoints") {
        auto ra = run_cli(common + "--steps 2 --seed 7 --out " +
                          (dir / "a.ckpt").string());
        auto rb = run_cli(common + "--steps 2 --seed 7 --out " +
                          (dir / "b.ckpt").string());
        REQUIRE(ra.exit_code == 0);
        REQUIRE(rb.exit_code == 0);
        CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
    }
    fs::remove_all(dir);
}

TEST_CASE("cli train errors") {
    auto r = run_cli("train --data /nonexistent_melsep_dir --steps 1 --out /tmp/x.ckpt");
    CHECK(r.exit_code == 2);

    auto r2 = run_cli("train --steps 1 --out /tmp/x.ckpt");  // no data source
    CHECK(r2.exit_code == 2);

    SECTION("divergence exits 3") {
        auto dir = temp_dir("diverge");
        auto r3 = run_cli("train --fixture 0 --bands 8 --embed-dim 16 --blocks 1 "
                          "--steps 4 --lr 1e200 --out " +
                          (dir / "d.ckpt").string());
        CHECK(r3.exit_code == 3);
        fs::remove_all(dir);
    }
}

TEST_CASE("cli separate with an identity-mask checkpoint reproduces the input") {
    auto dir = temp_dir("sep");
    // fixture mixture as input
    auto bundle = synth_fixture(0);
    save_wav((dir / "mix.wav").string(), bundle.mixture);

    // identity-mask debug checkpoint, written through the library
    auto mapping = patch_coverage(binarize(mel_filterbank(44100, 2048, 8)));
    ModelConfig mc;
    mc.embed_dim = 16;
    mc.heads = 2;
    mc.blocks = 1;
    mc.channels = 2;
    auto params = make_identity_mask_params<double>(mc, mapping);
    CheckpointHeader h;
    h.model = mc;
    h.mapping = mapping;
    h.stem = "passthrough";
    save_checkpoint((dir / "id.ckpt").string(), h, params);

    auto r = run_cli("separate --ckpt " + (dir / "id.ckpt").string() + " --in " +
                     (dir / "mix.wav").string() + " --out " + (dir / "out").string() +
                     " --chunk-seconds 0.5");
    INFO(r.out);
    REQUIRE(r.exit_code == 0);
    auto est = load_wav((dir / "out" / "passthrough.wav").string());
    REQUIRE(est.length() == bundle.mixture.length());
    double num = 0, den = 0;
    for (int c = 0; c < 2; ++c)
        for (long i = 0; i < est.length(); ++i) {
            const double d = est.channels[c][i] - bundle.mixture.channels[c][i];
            num += d * d;
            den += bundle.mixture.channels[c][i] * bundle.mixture.channels[c][i];
        }
    CHECK(std::sqrt(num / den) <= 1e-6);

    SECTION("sample rate mismatch exits 2") {
        auto wrong = bundle.mixture;
        wrong.sample_rate = 22050;
        save_wav((dir / "wrong.wav").string(), wrong);
        auto r2 = run_cli("separate --ckpt " + (dir / "id.ckpt").string() + " --in " +
                          (dir / "wrong.wav").string() + " --out " +
                          (dir / "out2").string());
        CHECK(r2.exit_code == 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli evaluate") {
    auto dir = temp_dir("eval");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> d(-0.5f, 0.5f);
    auto make_track = [&](const fs::path& root, const std::string& name) {
        fs::create_directories(root / name);
        for (const char* stem : {"mixture", "vox", "bass"}) {
            AudioBuffer b;
            b.sample_rate = 44100;
            b.channels.assign(2, std::vector<double>(2 * 44100));
            for (auto& ch : b.channels)
                for (auto& v : ch) v = d(rng);
            save_wav((root / name / (std::string(stem) + ".wav")).string(), b);
        }
    };
    make_track(dir / "ref", "trackA");
    make_track(dir / "ref", "trackB");

    SECTION("estimates equal to references score at the cap") {
        fs::copy(dir / "ref", dir / "est", fs::copy_options::recursive);
        auto r = run_cli("evaluate --ref " + (dir / "ref").string() + " --est " +
                         (dir / "est").string() + " --out " +
                         (dir / "report").string());
        INFO(r.out);
        REQUIRE(r.exit_code == 0);
        std::ifstream in(dir / "report.json");
        nlohmann::json j;
        in >> j;
        for (const auto& row : j["tracks"]) REQUIRE(row["per_track_db"] == 100.0);
        CHECK(j["dataset"]["vox"] == 100.0);
        CHECK(j["dataset"]["bass"] == 100.0);
        CHECK(fs::exists(dir / "report.csv"));
    }

    SECTION("missing estimate exits 2 and names the offender") {
        fs::copy(dir / "ref", dir / "est2", fs::copy_options::recursive);
        fs::remove(dir / "est2" / "trackB" / "vox.wav");
        auto r = run_cli("evaluate --ref " + (dir / "ref").string() + " --est " +
                         (dir / "est2").string());
        CHECK(r.exit_code == 2);
        CHECK(r.out.find("trackB/vox") != std::string::npos);
    }

    SECTION("stem filter restricts the report") {
        fs::copy(dir / "ref", dir / "est3", fs::copy_options::recursive);
        auto r = run_cli("evaluate --ref " + (dir / "ref").string() + " --est " +
                         (dir / "est3").string() + " --stems bass --out " +
                         (dir / "rep3").string());
        REQUIRE(r.exit_code == 0);
        std::ifstream in(dir / "rep3.json");
        nlohmann::json j;
        in >> j;
        CHECK(j["tracks"].size() == 2);
        CHECK(j["dataset"].contains("bass"));
        CHECK_FALSE(j["dataset"].contains("vox"));
    }
    fs::remove_all(dir);
}

TEST_CASE("cli rejects unknown flags") {
    auto r = run_cli("mapping --out /tmp/x.json --definitely-not-a-flag 1");
    CHECK(r.exit_code == 2);
}

TEST_CASE("config file with unknown keys is rejected") {
    auto dir = temp_dir("cfg");
    {
        std::ofstream os(dir / "bad.json");
        os << R"({"steps": 3, "not_a_real_key": 1})";
    }
    auto r = run_cli("train --fixture 0 --config " + (dir / "bad.json").string() +
                     " --out " + (dir / "x.ckpt").string());
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("not_a_real_key") != std::string::npos);
    fs::remove_all(dir);
}
