#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <functional>
#include <sstream>

#include "isocaps/commands.hpp"
#include "isocaps/error.hpp"
#include "isocaps/io.hpp"
#include "oracles.hpp"

using namespace isocaps;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an isocaps::Error");
    return ErrorKind::BadConfig;
}

int cli(std::vector<std::string> args, std::string* output = nullptr) {
    args.insert(args.begin(), "isocaps");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (output) *output = out.str() + err.str();
    return code;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

ModelConfig small_config() {
    ModelConfig c;
    c.n = 8;
    c.k = 3;
    c.channels = 2;
    c.routing_iterations = 2;
    c.gamma = 0.3;
    c.mode = MatchMode::Spectral;
    return c;
}

// A small synthetic dataset and a model trained on it for one epoch.
struct Fixture {
    oracle::TempDir dir{"cli"};
    fs::path data = dir / "d.bgd";
    fs::path run = dir / "run";

    Fixture() {
        REQUIRE(cli({"synth", "--n", "8", "--per-class", "4", "--motif", "3", "--noise", "0.05", "--seed", "3",
                     "--out", data.string()}) == 0);
        REQUIRE(cli({"train", "--dataset", data.string(), "--out", run.string(), "--k", "3", "--epochs", "1",
                     "--batch", "4"}) == 0);
    }
};

}  // namespace

TEST_CASE("model container round trip is exact") {
    oracle::TempDir dir("model");
    const Model model = Model::create(small_config(), 4);
    save_model(model, dir / "m.isocaps");
    CHECK(oracle::read_file(dir / "m.isocaps").rfind("ISOCAPS1\n", 0) == 0);
    const Model back = load_model(dir / "m.isocaps");
    CHECK(back.config().n == 8);
    CHECK(back.config().mode == MatchMode::Spectral);
    CHECK(back.config().gamma == 0.3);
    auto a = const_cast<ModelParams&>(model.params()).views();
    auto b = const_cast<ModelParams&>(back.params()).views();
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].name == b[t].name);
        for (std::size_t e = 0; e < a[t].size; ++e) CHECK(a[t].data[e] == b[t].data[e]);
    }
    std::mt19937_64 rng(5);
    const Mat g = oracle::random_symmetric(8, rng);
    CHECK(model.forward(g).class_capsules == back.forward(g).class_capsules);
}

TEST_CASE("damaged model files raise ModelFormatError") {
    oracle::TempDir dir("badmodel");
    save_model(Model::create(small_config(), 4), dir / "m.isocaps");
    const std::string good = oracle::read_file(dir / "m.isocaps");

    auto expect_format_error = [&](const std::string& text) {
        write_text(dir / "bad.isocaps", text);
        CHECK(kind_of([&] { load_model(dir / "bad.isocaps"); }) == ErrorKind::ModelFormatError);
    };
    expect_format_error("");
    expect_format_error("ISOCAPS2" + good.substr(8));
    expect_format_error(good.substr(0, good.size() / 2));
    expect_format_error(good + "extra\n");
    std::string renamed = good;
    renamed.replace(renamed.find("route.W"), 7, "route.X");
    expect_format_error(renamed);
    std::string reshaped = good;
    reshaped.replace(reshaped.find("route.W 9 9"), 11, "route.W 9 8");
    expect_format_error(reshaped);
    std::string garbled = good;
    garbled[garbled.find("tensor template0") + 30] = 'x';
    expect_format_error(garbled);
    std::string bigger = good;
    bigger.replace(bigger.find("n=8"), 3, "n=9");
    expect_format_error(bigger);
    CHECK(kind_of([&] { load_model(dir / "missing.isocaps"); }) == ErrorKind::IoFailure);
}

TEST_CASE("matrix text and PGM export") {
    oracle::TempDir dir("pgm");
    Mat m(2, 3);
    m << -1.0, 0.0, 1.0, 2.0, -0.5, 0.25;
    write_matrix_text(m, dir / "m.txt");
    CHECK(oracle::read_file(dir / "m.txt") == "-1.000000000 0.000000000 1.000000000\n2.000000000 -0.500000000 0.250000000\n");
    CHECK(read_matrix_text(dir / "m.txt") == m);

    write_pgm(m, dir / "m.pgm");
    const std::string pgm = oracle::read_file(dir / "m.pgm");
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 6);
    CHECK(pgm.substr(0, header.size()) == header);
    const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[1] == 128);
    CHECK(px[2] == 255);
    CHECK(px[3] == 255);
    CHECK(px[4] == 64);
    CHECK(px[5] == 159);
}

TEST_CASE("key=value files") {
    oracle::TempDir dir("kv");
    write_text(dir / "c.cfg", "# comment\n\n  lr = 0.005 \nepochs=7\n");
    const auto kv = read_key_values(dir / "c.cfg");
    CHECK(kv.size() == 2);
    CHECK(kv.at("lr") == "0.005");
    write_text(dir / "bad.cfg", "lr 0.005\n");
    CHECK(kind_of([&] { read_key_values(dir / "bad.cfg"); }) == ErrorKind::BadConfig);
    write_key_values(kv, dir / "out.cfg");
    CHECK(read_key_values(dir / "out.cfg") == kv);
}

TEST_CASE("command-line values override the config file") {
    const RunConfig c = resolve_run_config({{"lr", "0.5"}, {"epochs", "7"}, {"mode", "spectral"}}, {{"lr", "0.02"}});
    CHECK(c.train.learning_rate == 0.02);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.mode == MatchMode::Spectral);
    CHECK(kind_of([] { resolve_run_config({{"bogus", "1"}}, {}); }) == ErrorKind::BadConfig);
    CHECK(kind_of([] { resolve_run_config({}, {{"epochs", "ten"}}); }) == ErrorKind::BadConfig);
    CHECK(kind_of([] { resolve_run_config({}, {{"ablation", "partial"}}); }) == ErrorKind::BadConfig);

    // the echoed configuration resolves back to itself
    const RunConfig again = resolve_run_config(c.resolved(), {});
    CHECK(again.resolved() == c.resolved());
}

TEST_CASE("synth writes the requested graphs deterministically") {
    oracle::TempDir dir("synth");
    const std::vector<std::string> flags{"--n", "20", "--per-class", "30", "--motif", "4", "--noise", "0.05", "--seed", "7"};
    auto with_out = [&](const std::string& name) {
        auto f = flags;
        f.insert(f.begin(), "synth");
        f.push_back("--out");
        f.push_back((dir / name).string());
        return f;
    };
    REQUIRE(cli(with_out("d.bgd")) == 0);
    REQUIRE(cli(with_out("e.bgd")) == 0);
    CHECK(load_dataset(dir / "d.bgd").size() == 60);
    CHECK(oracle::read_file(dir / "d.bgd") == oracle::read_file(dir / "e.bgd"));
    const auto manifest = read_key_values(dir / "d.bgd.manifest");
    CHECK(manifest.at("seed") == "7");
    CHECK(manifest.at("graphs") == "60");

    CHECK(cli({"synth", "--motif", "25", "--n", "20", "--out", (dir / "x.bgd").string()}) ==
          static_cast<int>(ErrorKind::BadSpec));
    CHECK(cli({"synth", "--noise", "-1", "--out", (dir / "x.bgd").string()}) == static_cast<int>(ErrorKind::BadSpec));
}

TEST_CASE("train, eval and reconstruct") {
    Fixture f;
    for (const char* name : {"metrics.csv", "templates.txt", "model.isocaps", "config.resolved"})
        CHECK(fs::exists(f.run / name));
    const auto resolved = read_key_values(f.run / "config.resolved");
    CHECK(resolved.at("k") == "3");
    CHECK(resolved.at("epochs") == "1");
    CHECK(import_templates(f.run / "templates.txt").k == 3);
    const Model model = load_model(f.run / "model.isocaps");
    CHECK(model.config().k == 3);

    std::string out;
    CHECK(cli({"eval", "--model", (f.run / "model.isocaps").string(), "--dataset", f.data.string(), "--out",
               (f.dir / "ev").string()},
              &out) == 0);
    CHECK(out.find("accuracy") != std::string::npos);
    CHECK(fs::exists(f.dir / "ev" / "eval.csv"));

    const fs::path rc = f.dir / "rc";
    REQUIRE(cli({"reconstruct", "--model", (f.run / "model.isocaps").string(), "--dataset", f.data.string(),
                 "--graph", "p0001_c1", "--out", rc.string()}) == 0);
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(rc)) ++files;
    CHECK(files == 4);
    const Mat original = read_matrix_text(rc / "p0001_c1_original.txt");
    CHECK(original.rows() == 8);
    CHECK(read_matrix_text(rc / "p0001_c1_reconstructed.txt").cols() == 8);
    CHECK(oracle::read_file(rc / "p0001_c1_reconstructed.pgm").rfind("P5\n8 8\n255\n", 0) == 0);

    CHECK(cli({"reconstruct", "--model", (f.run / "model.isocaps").string(), "--dataset", f.data.string(),
               "--graph", "nope", "--out", rc.string()}) == static_cast<int>(ErrorKind::UnknownGraphId));
}

TEST_CASE("eval error paths") {
    Fixture f;
    write_text(f.dir / "corrupt.isocaps", "ISOCAPS1\nversion 1\nn=8\n");
    CHECK(cli({"eval", "--model", (f.dir / "corrupt.isocaps").string(), "--dataset", f.data.string()}) ==
          static_cast<int>(ErrorKind::ModelFormatError));
    write_text(f.dir / "empty.bgd", "0 8\n");
    CHECK(cli({"eval", "--model", (f.run / "model.isocaps").string(), "--dataset", (f.dir / "empty.bgd").string()}) ==
          static_cast<int>(ErrorKind::EmptyEvalSet));
    CHECK(cli({"eval", "--model", (f.run / "model.isocaps").string(), "--dataset", (f.dir / "none.bgd").string()}) ==
          static_cast<int>(ErrorKind::IoFailure));
}

TEST_CASE("train option routing") {
    oracle::TempDir dir("trainopts");
    const fs::path data = dir / "d.bgd";
    REQUIRE(cli({"synth", "--n", "8", "--per-class", "3", "--motif", "3", "--out", data.string()}) == 0);
    auto train = [&](const std::string& name, std::vector<std::string> extra) {
        std::vector<std::string> args{"train", "--dataset", data.string(), "--out", (dir / name).string(), "--epochs", "1"};
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args);
    };
    CHECK(train("spectral5", {"--mode", "spectral", "--k", "5"}) == 0);
    CHECK(train("brute7", {"--k", "7"}) == static_cast<int>(ErrorKind::KTooLarge));
    CHECK(train("lengthonly", {"--k", "3", "--ablation", "length-only", "--c", "1"}) == 0);
    CHECK(load_model(dir / "lengthonly" / "model.isocaps").config().ablation == Ablation::LengthOnly);
    CHECK(train("gamma", {"--k", "3", "--gamma", "2"}) == static_cast<int>(ErrorKind::BadGamma));
    CHECK(train("big", {"--k", "9"}) == static_cast<int>(ErrorKind::GraphTooSmall));

    write_text(dir / "c.cfg", "k=3\nlr=0.5\nepochs=2\n");
    CHECK(cli({"train", "--config", (dir / "c.cfg").string(), "--dataset", data.string(), "--out",
               (dir / "cfg").string(), "--lr", "0.02"}) == 0);
    const auto resolved = read_key_values(dir / "cfg" / "config.resolved");
    CHECK(resolved.at("lr") == "0.02");
    CHECK(resolved.at("epochs") == "2");
    CHECK(resolved.at("k") == "3");
}

TEST_CASE("usage errors and help") {
    CHECK(cli({"train", "--bogus"}) == kUsageExitCode);
    CHECK(cli({}) == kUsageExitCode);
    CHECK(cli({"frobnicate"}) == kUsageExitCode);
    std::string out;
    CHECK(cli({"--help"}, &out) == 0);
    CHECK(out.find("bench-k") != std::string::npos);
    CHECK(cli({"train"}) == static_cast<int>(ErrorKind::BadConfig));
}

TEST_CASE("bench-k writes one row per k with spectral numbers on the last") {
    oracle::TempDir dir("bench");
    const fs::path data = dir / "d.bgd";
    REQUIRE(cli({"synth", "--n", "8", "--per-class", "3", "--motif", "3", "--out", data.string()}) == 0);
    REQUIRE(cli({"bench-k", "--dataset", data.string(), "--out", (dir / "b").string(), "--epochs", "1"}) == 0);
    std::ifstream csv(dir / "b" / "bench_k.csv");
    std::vector<std::string> lines;
    for (std::string line; std::getline(csv, line);) lines.push_back(line);
    REQUIRE(lines.size() == 6);
    CHECK(lines[0] == "k,accuracy,f1,time_s,spectral_accuracy,spectral_f1,spectral_time_s");
    for (int k = 1; k <= 5; ++k) {
        CHECK(lines[k].rfind(std::to_string(k) + ",", 0) == 0);
        CHECK(fs::exists(dir / "b" / ("templates_k" + std::to_string(k) + ".txt")));
        const bool trailing_empty = lines[k].substr(lines[k].size() - 2) == ",,";
        CHECK(trailing_empty == (k < 5));
    }
    CHECK(fs::exists(dir / "b" / "templates_k5_spectral.txt"));
    CHECK(fs::exists(dir / "b" / "config.resolved"));
}
