// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion with
// the measured values and exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "isocaps/capsule.hpp"
#include "isocaps/commands.hpp"
#include "isocaps/graph_data.hpp"
#include "isocaps/io.hpp"
#include "isocaps/iso_layer.hpp"
#include "isocaps/model.hpp"
#include "isocaps/trainer.hpp"
#include "oracles.hpp"

using namespace isocaps;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
    char buf[1024];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

GraphDataset synthetic(std::uint64_t seed, double noise) {
    SynthSpec spec;
    spec.seed = seed;
    spec.noise_std = noise;
    return generate_synthetic(spec);
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "isocaps");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) std::cerr << "cli failed (" << code << "): " << err.str() << '\n';
    return code;
}

// Symmetric pairs of both sizes: the relaxation never scores below the exact
// matcher, and a planted permutation scores 1 under both.
Outcome criterion1() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    double worst_gap = std::numeric_limits<double>::infinity();
    double worst_planted = 0.0;
    int pairs = 0;
    for (int k : {3, 4})
        for (int i = 0; i < 100; ++i) {
            const Mat tmpl = oracle::random_symmetric(k, rng);
            const Mat region = oracle::random_symmetric(k, rng);
            const double exact = match_bruteforce(tmpl, region).score;
            const double relaxed = match_spectral(tmpl, region).score;
            worst_gap = std::min(worst_gap, relaxed - exact);

            const Mat q = oracle::random_permutation_matrix(k, rng);
            const Mat planted = q * tmpl * q.transpose();
            worst_planted = std::max({worst_planted, std::abs(1.0 - match_bruteforce(tmpl, planted).score),
                                      std::abs(1.0 - match_spectral(tmpl, planted).score)});
            ++pairs;
        }
    const double elapsed = seconds_since(start);
    const bool pass = worst_gap >= -1e-12 && worst_planted < 1e-6 && elapsed < 10.0;
    return {pass, fmt("%d pairs, min(F_spectral - F_bruteforce) = %.3g, max planted |1 - F| = %.3g, %.2f s", pairs,
                      worst_gap, worst_planted, elapsed)};
}

Outcome criterion2() {
    const auto start = Clock::now();
    ModelConfig config;
    config.n = 8;
    config.k = 3;
    config.channels = 1;
    config.capsule_dim = 9;
    config.routing_iterations = 2;
    config.mode = MatchMode::Bruteforce;
    Model model = Model::create(config, 11);
    std::mt19937_64 rng(12);
    const Mat adjacency = oracle::random_symmetric(8, rng);
    const GradientCheckReport report = gradient_check(model, BrainGraph{"g", 1, adjacency}, 0.0005, 13);
    std::size_t checked = 0;
    for (const auto& e : report.entries) checked += e.checked;
    const double elapsed = seconds_since(start);
    const bool pass = report.max_rel_error < 1e-4 && elapsed < 60.0;
    return {pass, fmt("%zu coordinates over %zu tensors, max relative error %.3g, %.2f s", checked,
                      report.entries.size(), report.max_rel_error, elapsed)};
}

struct Runs {
    std::vector<TrainResult> full;
    std::vector<TrainResult> length_only;
    double seconds = 0.0;
};

TrainConfig spectral_config(std::uint64_t seed, Ablation ablation) {
    TrainConfig config;
    config.mode = MatchMode::Spectral;
    config.seed = seed;
    config.ablation = ablation;
    config.threads = 1;
    return config;
}

Runs orientation_runs() {
    Runs runs;
    const auto start = Clock::now();
    for (std::uint64_t seed : {1, 2, 3}) {
        const GraphDataset data = synthetic(seed, 0.05);
        runs.full.push_back(train(data, spectral_config(seed, Ablation::None)));
        runs.length_only.push_back(train(data, spectral_config(seed, Ablation::LengthOnly)));
        std::cerr << "seed " << seed << ": full " << runs.full.back().mean.accuracy << ", length-only "
                  << runs.length_only.back().mean.accuracy << '\n';
    }
    runs.seconds = seconds_since(start);
    return runs;
}

Outcome criterion3(const Runs& runs) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> log_norm(-12.0, 6.0);
    std::vector<Vec> inputs;
    for (double norm : {0.0, 1e-9, 1.0, 1e3}) {
        Vec x = Vec::Zero(16);
        if (norm > 0.0) x(3) = norm;
        inputs.push_back(x);
    }
    while (inputs.size() < 10000) {
        Vec x(16);
        for (auto& v : x) v = gauss(rng);
        inputs.push_back(x / x.norm() * std::pow(10.0, log_norm(rng)));
    }
    double max_out = 0.0;
    double max_dev = 0.0;
    bool finite = true;
    for (const Vec& x : inputs) {
        const Vec y = squash(x);
        const double r = x.norm();
        const double expected = r * r / (1.0 + r * r);
        finite = finite && y.allFinite();
        max_out = std::max(max_out, y.norm());
        max_dev = std::max(max_dev, std::abs(y.norm() - expected));
    }
    const bool squash_ok = finite && max_out < 1.0 && max_dev < 1e-12;

    RoutingStats stats;
    for (const auto& r : runs.full) stats.merge(r.routing);
    for (const auto& r : runs.length_only) stats.merge(r.routing);
    const bool pass = squash_ok && stats.valid() && stats.iterations_checked > 0;
    return {pass, fmt("squash: %zu vectors, max |out| = %.17g, max deviation %.2g; routing: %zu iterations, "
                      "alpha in [%.3g, %.6f], max sum %.6f",
                      inputs.size(), max_out, max_dev, stats.iterations_checked, stats.min_alpha, stats.max_alpha,
                      stats.max_alpha_sum)};
}

// Noise-free pair members differ only by the orientation of the motif. At the
// motif window the length-only capsules must coincide, the full ones must not.
Outcome criterion4(const Runs& runs) {
    SynthSpec spec;
    spec.seed = 1;
    spec.noise_std = 0.0;
    const GraphDataset data = generate_synthetic(spec);
    const int offset = synthetic_motif_offset(spec);

    std::string detail;
    bool pass = true;
    for (MatchMode mode : {MatchMode::Bruteforce, MatchMode::Spectral}) {
        double length_score_diff = 0.0, length_vector_diff = 0.0, full_vector_diff = 0.0;
        int pairs = 0;
        for (std::size_t i = 0; i + 1 < data.size(); i += 2) {
            const BrainGraph& a = data.graphs[i];
            const BrainGraph& b = data.graphs[i + 1];
            if (a.label == b.label) continue;
            ++pairs;
            for (const TrainResult* run : {&runs.length_only.front(), &runs.full.front()}) {
                ModelConfig config = run->model.config();
                config.mode = mode;
                const Model model(config, run->model.params());
                const ForwardPass pa = model.forward(a.adjacency);
                const ForwardPass pb = model.forward(b.adjacency);
                for (int c = 0; c < config.channels; ++c) {
                    const int row = pa.primary.row(c, offset, offset);
                    const double dv = (pa.primary.vectors.row(row) - pb.primary.vectors.row(row)).cwiseAbs().maxCoeff();
                    if (config.ablation == Ablation::LengthOnly) {
                        length_score_diff = std::max(
                            length_score_diff, std::abs(pa.iso.scores[c](offset, offset) - pb.iso.scores[c](offset, offset)));
                        length_vector_diff = std::max(length_vector_diff, dv);
                    } else {
                        full_vector_diff = std::max(full_vector_diff, dv);
                    }
                }
            }
        }
        const bool ok = pairs > 0 && length_score_diff < 1e-6 && length_vector_diff < 1e-6 && full_vector_diff > 0.1;
        pass = pass && ok;
        detail += fmt("%s%s: %d pairs, length-only max |dF| = %.3g, max |dm| = %.3g; full max |dm| = %.3f",
                      detail.empty() ? "" : "; ", std::string(to_string(mode)).c_str(), pairs, length_score_diff,
                      length_vector_diff, full_vector_diff);
    }
    return {pass, detail};
}

Outcome criterion5(const Runs& runs) {
    double full = 0.0, length = 0.0;
    std::string per_seed;
    for (std::size_t i = 0; i < runs.full.size(); ++i) {
        full += runs.full[i].mean.accuracy;
        length += runs.length_only[i].mean.accuracy;
        per_seed += fmt("%s%.3f/%.3f", i ? " " : "", runs.full[i].mean.accuracy, runs.length_only[i].mean.accuracy);
    }
    full /= static_cast<double>(runs.full.size());
    length /= static_cast<double>(runs.length_only.size());
    const bool pass = full >= 0.90 && length <= 0.65 && runs.seconds < 900.0;
    return {pass, fmt("full mean %.3f, length-only mean %.3f (per seed %s), %.1f s", full, length, per_seed.c_str(),
                      runs.seconds)};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(oracle::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream fields(line);
        while (std::getline(fields, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

Outcome criterion6(const std::filesystem::path& dataset, const std::filesystem::path& dir) {
    const int code = cli({"bench-k", "--dataset", dataset.string(), "--out", dir.string(), "--seed", "1", "--threads",
                          "1"});
    if (code != 0) return {false, fmt("bench-k exited with %d", code)};
    const auto rows = read_csv(dir / "bench_k.csv");
    std::vector<double> acc, time;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        acc.push_back(std::stod(rows[i][1]));
        time.push_back(std::stod(rows[i][3]));
    }
    if (acc.size() != static_cast<std::size_t>(kBenchMaxK)) return {false, "bench_k.csv has the wrong row count"};
    bool increasing = true;
    for (std::size_t i = 1; i < time.size(); ++i) increasing = increasing && time[i] > time[i - 1];
    const double ratio = time[4] / time[3];
    const bool pass = increasing && ratio > 3.0 && acc[0] < acc[3];
    std::string times, accs;
    for (std::size_t i = 0; i < time.size(); ++i) {
        times += fmt("%s%.2f", i ? " " : "", time[i]);
        accs += fmt("%s%.3f", i ? " " : "", acc[i]);
    }
    return {pass, fmt("times k=1..5 [%s] s (increasing: %s), t5/t4 = %.2f, accuracy [%s], spectral k=5 acc %s in %s s",
                      times.c_str(), increasing ? "yes" : "no", ratio, accs.c_str(), rows[5][4].c_str(),
                      rows[5][6].c_str())};
}

Outcome criterion7(const Runs& runs, const std::filesystem::path& dataset, const std::filesystem::path& train_dir,
                   const std::filesystem::path& recon_dir) {
    int curves = 0, decreasing = 0;
    double worst_ratio = 0.0;
    for (const auto& run : runs.full) {
        std::map<std::string, std::pair<double, double>> first_last;
        std::map<std::string, int> first_epoch;
        for (const auto& r : run.records) {
            if (r.split != "train") continue;
            auto it = first_last.find(r.fold);
            if (it == first_last.end()) {
                first_last[r.fold] = {r.loss_recon, r.loss_recon};
                first_epoch[r.fold] = r.epoch;
            } else {
                it->second.second = r.loss_recon;
            }
        }
        for (const auto& [fold, fl] : first_last) {
            ++curves;
            if (fl.second < fl.first) ++decreasing;
            worst_ratio = std::max(worst_ratio, fl.second / fl.first);
        }
    }

    const Model trained = load_model(train_dir / "model.isocaps");
    const GraphDataset data = load_dataset(dataset);
    const SplitPlan plan = make_folds(data, 1);
    const auto held_out = plan.members(SplitPlan::kFolds - 1);
    const BrainGraph& graph = data.graphs[held_out.front()];
    const int code = cli({"reconstruct", "--model", (train_dir / "model.isocaps").string(), "--dataset",
                          dataset.string(), "--graph", graph.id, "--out", recon_dir.string()});
    if (code != 0) return {false, fmt("reconstruct exited with %d", code)};
    const Mat recon = read_matrix_text(recon_dir / (graph.id + "_reconstructed.txt"));
    const double trained_dist = (recon - graph.adjacency).norm();

    const Model untrained = Model::create(trained.config(), fold_model_seed(1, SplitPlan::kFolds - 1));
    const double untrained_dist = (untrained.forward(graph.adjacency).reconstruction.adjacency - graph.adjacency).norm();

    double trained_mean = 0.0, untrained_mean = 0.0;
    for (std::size_t i : held_out) {
        const Mat& a = data.graphs[i].adjacency;
        trained_mean += (trained.forward(a).reconstruction.adjacency - a).norm();
        untrained_mean += (untrained.forward(a).reconstruction.adjacency - a).norm();
    }
    trained_mean /= static_cast<double>(held_out.size());
    untrained_mean /= static_cast<double>(held_out.size());

    const bool pass = curves > 0 && decreasing == curves && trained_dist < untrained_dist && trained_mean < untrained_mean;
    return {pass, fmt("recon loss fell in %d/%d fold curves (worst last/first %.3f); held-out %s: trained %.3f vs "
                      "untrained %.3f, held-out mean %.3f vs %.3f",
                      decreasing, curves, worst_ratio, graph.id.c_str(), trained_dist, untrained_dist, trained_mean,
                      untrained_mean)};
}

Outcome criterion8(const std::filesystem::path& dataset, const std::filesystem::path& first,
                   const std::filesystem::path& second) {
    for (const auto& dir : {first, second}) {
        const int code = cli({"train", "--dataset", dataset.string(), "--out", dir.string(), "--seed", "1", "--mode",
                              "spectral", "--threads", "1"});
        if (code != 0) return {false, fmt("train exited with %d", code)};
    }
    const std::string a = oracle::read_file(first / "metrics.csv");
    const std::string b = oracle::read_file(second / "metrics.csv");
    const bool pass = !a.empty() && a == b;
    return {pass, fmt("metrics.csv %zu bytes vs %zu bytes, %s", a.size(), b.size(),
                      a == b ? "byte-identical" : "different")};
}

}  // namespace

int main() {
    oracle::TempDir tmp("acceptance");
    const auto dataset = tmp.path() / "synth_seed1.bgd";
    save_dataset(synthetic(1, 0.05), dataset);

    std::map<int, Outcome> outcomes;
    auto run = [&](int id, auto&& check) {
        try {
            outcomes[id] = check();
        } catch (const std::exception& e) {
            outcomes[id] = {false, std::string("exception: ") + e.what()};
        }
        std::cerr << "criterion " << id << " done\n";
    };

    run(1, criterion1);
    run(2, criterion2);
    Runs runs;
    bool have_runs = true;
    try {
        runs = orientation_runs();
    } catch (const std::exception& e) {
        have_runs = false;
        for (int id : {3, 4, 5, 7}) outcomes[id] = {false, std::string("training failed: ") + e.what()};
    }
    if (have_runs) {
        run(3, [&] { return criterion3(runs); });
        run(4, [&] { return criterion4(runs); });
        run(5, [&] { return criterion5(runs); });
    }
    run(8, [&] { return criterion8(dataset, tmp.path() / "train_a", tmp.path() / "train_b"); });
    if (have_runs)
        run(7, [&] { return criterion7(runs, dataset, tmp.path() / "train_a", tmp.path() / "recon"); });
    run(6, [&] { return criterion6(dataset, tmp.path() / "bench"); });

    int failed = 0;
    for (const auto& [id, o] : outcomes) {
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << '\n';
        if (!o.pass) ++failed;
    }
    std::cout << (outcomes.size() - failed) << "/" << outcomes.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
