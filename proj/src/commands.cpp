#include "isocaps/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "isocaps/error.hpp"
#include "isocaps/io.hpp"

namespace isocaps {

namespace {

// Shortest text that reads back as the same double.
std::string fmt(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

long long to_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::BadConfig, "'" + key + "' expects an integer, got '" + value + "'");
}

double to_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::BadConfig, "'" + key + "' expects a number, got '" + value + "'");
}

int to_int(const std::string& key, const std::string& value) {
    const long long v = to_integer(key, value);
    if (v < -2'000'000'000LL || v > 2'000'000'000LL) throw Error(ErrorKind::BadConfig, "'" + key + "' out of range");
    return static_cast<int>(v);
}

void require(const std::filesystem::path& p, const char* flag) {
    if (p.empty()) throw Error(ErrorKind::BadConfig, std::string("missing --") + flag);
}

void prepare_out_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw Error(ErrorKind::IoFailure, "cannot create output directory " + dir.string());
}

void echo_config(const RunConfig& config, std::ostream& log) {
    for (const auto& [key, value] : config.resolved()) log << "  " << key << '=' << value << '\n';
}

// Flags every training-style command accepts, beyond --config.
const std::vector<std::string> kTrainKeys = {"dataset", "out",     "seed",        "threads",    "k",
                                             "c",       "mode",    "gamma",       "delta",      "epochs",
                                             "batch",   "lr",      "ablation",    "capsule-dim", "iterations",
                                             "weight-decay", "patience"};

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    TrainConfig& t = train;
    if (key == "dataset") dataset = value;
    else if (key == "out") out = value;
    else if (key == "model") model = value;
    else if (key == "graph") graph = value;
    else if (key == "seed") {
        const long long s = to_integer(key, value);
        if (s < 0) throw Error(ErrorKind::BadConfig, "seed must be non-negative");
        t.seed = static_cast<std::uint64_t>(s);
        synth.seed = t.seed;
    }
    else if (key == "threads") t.threads = to_int(key, value);
    else if (key == "k") t.k = to_int(key, value);
    else if (key == "c") t.channels = to_int(key, value);
    else if (key == "capsule-dim") t.capsule_dim = to_int(key, value);
    else if (key == "iterations") t.routing_iterations = to_int(key, value);
    else if (key == "mode") t.mode = parse_match_mode(value);
    else if (key == "gamma") t.gamma = to_real(key, value);
    else if (key == "delta") t.delta = to_real(key, value);
    else if (key == "epochs") t.epochs = to_int(key, value);
    else if (key == "batch") t.batch_size = to_int(key, value);
    else if (key == "lr") t.learning_rate = to_real(key, value);
    else if (key == "weight-decay") t.weight_decay = to_real(key, value);
    else if (key == "patience") t.patience = to_int(key, value);
    else if (key == "ablation") t.ablation = parse_ablation(value);
    else if (key == "n") synth.n = to_int(key, value);
    else if (key == "per-class") synth.count_per_class = to_int(key, value);
    else if (key == "motif") synth.motif_size = to_int(key, value);
    else if (key == "noise") synth.noise_std = to_real(key, value);
    else throw Error(ErrorKind::BadConfig, "unknown config key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::resolved() const {
    const TrainConfig& t = train;
    return {
        {"dataset", dataset.string()},
        {"out", out.string()},
        {"model", model.string()},
        {"graph", graph},
        {"seed", std::to_string(t.seed)},
        {"threads", std::to_string(t.threads)},
        {"k", std::to_string(t.k)},
        {"c", std::to_string(t.channels)},
        {"capsule-dim", std::to_string(t.capsule_dim)},
        {"iterations", std::to_string(t.routing_iterations)},
        {"mode", std::string(to_string(t.mode))},
        {"gamma", fmt(t.gamma)},
        {"delta", fmt(t.delta)},
        {"epochs", std::to_string(t.epochs)},
        {"batch", std::to_string(t.batch_size)},
        {"lr", fmt(t.learning_rate)},
        {"weight-decay", fmt(t.weight_decay)},
        {"patience", std::to_string(t.patience)},
        {"ablation", std::string(to_string(t.ablation))},
        {"n", std::to_string(synth.n)},
        {"per-class", std::to_string(synth.count_per_class)},
        {"motif", std::to_string(synth.motif_size)},
        {"noise", fmt(synth.noise_std)},
    };
}

RunConfig resolve_run_config(const std::map<std::string, std::string>& file_values,
                             const std::map<std::string, std::string>& flag_values) {
    RunConfig config;
    for (const auto& [key, value] : file_values) {
        if (flag_values.count(key)) continue;
        config.set(key, value);
    }
    for (const auto& [key, value] : flag_values) config.set(key, value);
    return config;
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& config, std::ostream& log) {
    require(config.out, "out");
    const GraphDataset ds = generate_synthetic(config.synth);
    save_dataset(ds, config.out);
    std::filesystem::path manifest = config.out;
    manifest += ".manifest";
    write_key_values({{"seed", std::to_string(config.synth.seed)},
                      {"n", std::to_string(config.synth.n)},
                      {"per-class", std::to_string(config.synth.count_per_class)},
                      {"motif", std::to_string(config.synth.motif_size)},
                      {"motif-offset", std::to_string(synthetic_motif_offset(config.synth))},
                      {"noise", fmt(config.synth.noise_std)},
                      {"graphs", std::to_string(ds.size())}},
                     manifest);
    log << "wrote " << ds.size() << " graphs (n = " << ds.n << ") to " << config.out.string() << '\n';
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
    require(config.dataset, "dataset");
    require(config.out, "out");
    config.train.validate();
    const GraphDataset ds = load_dataset(config.dataset);
    prepare_out_dir(config.out);
    write_key_values(config.resolved(), config.out / "config.resolved");
    TrainResult result = train(ds, config.train);
    write_metrics_csv(result.records, config.out / "metrics.csv");
    export_templates(result.model.params().bank, config.out / "templates.txt");
    save_model(result.model, config.out / "model.isocaps");
    for (std::size_t f = 0; f < result.folds.size(); ++f)
        log << "fold " << f << ": accuracy " << fmt(result.folds[f].accuracy) << " f1 " << fmt(result.folds[f].f1)
            << '\n';
    log << "mean: accuracy " << fmt(result.mean.accuracy) << " f1 " << fmt(result.mean.f1) << '\n';
    return result;
}

Metrics cmd_eval(const RunConfig& config, std::ostream& log) {
    require(config.model, "model");
    require(config.dataset, "dataset");
    const Model model = load_model(config.model);
    const GraphDataset ds = load_dataset(config.dataset);
    if (!ds.empty() && ds.n != model.config().n)
        throw Error(ErrorKind::InconsistentNodeCount, "dataset has n = " + std::to_string(ds.n) +
                                                          ", model expects " + std::to_string(model.config().n));
    Batch graphs;
    for (const auto& g : ds.graphs) graphs.push_back(&g);
    const Metrics m = evaluate(model, graphs, config.train.delta, config.train.threads);
    log << "accuracy " << fmt(m.accuracy) << '\n' << "f1 " << fmt(m.f1) << '\n';
    if (!config.out.empty()) {
        prepare_out_dir(config.out);
        write_key_values(config.resolved(), config.out / "config.resolved");
        std::ofstream csv(config.out / "eval.csv");
        if (!csv) throw Error(ErrorKind::IoFailure, "cannot write eval.csv");
        csv << "graphs,accuracy,f1,loss_margin,loss_recon,loss_total\n"
            << ds.size() << ',' << fmt(m.accuracy) << ',' << fmt(m.f1) << ',' << fmt(m.loss_margin) << ','
            << fmt(m.loss_recon) << ',' << fmt(m.loss_total) << '\n';
        csv.flush();
        if (!csv) throw Error(ErrorKind::IoFailure, "write failed for eval.csv");
    }
    return m;
}

Mat cmd_reconstruct(const RunConfig& config, std::ostream& log) {
    require(config.model, "model");
    require(config.dataset, "dataset");
    require(config.out, "out");
    if (config.graph.empty()) throw Error(ErrorKind::BadConfig, "missing --graph");
    const Model model = load_model(config.model);
    const GraphDataset ds = load_dataset(config.dataset);
    const BrainGraph* graph = nullptr;
    for (const auto& g : ds.graphs)
        if (g.id == config.graph) graph = &g;
    if (!graph) throw Error(ErrorKind::UnknownGraphId, "no graph '" + config.graph + "' in " + config.dataset.string());
    if (graph->n() != model.config().n)
        throw Error(ErrorKind::InconsistentNodeCount, "graph has n = " + std::to_string(graph->n()) +
                                                          ", model expects " + std::to_string(model.config().n));
    const Mat recon = model.forward(graph->adjacency).reconstruction.adjacency;
    prepare_out_dir(config.out);
    const std::string stem = graph->id;
    write_matrix_text(graph->adjacency, config.out / (stem + "_original.txt"));
    write_matrix_text(recon, config.out / (stem + "_reconstructed.txt"));
    write_pgm(graph->adjacency, config.out / (stem + "_original.pgm"));
    write_pgm(recon, config.out / (stem + "_reconstructed.pgm"));
    log << "frobenius distance " << fmt((graph->adjacency - recon).norm()) << '\n';
    return recon;
}

std::vector<BenchRow> cmd_bench_k(const RunConfig& config, std::ostream& log) {
    require(config.dataset, "dataset");
    require(config.out, "out");
    config.train.validate();
    const GraphDataset ds = load_dataset(config.dataset);
    prepare_out_dir(config.out);
    write_key_values(config.resolved(), config.out / "config.resolved");

    auto timed = [&](int k, MatchMode mode, double& seconds) {
        TrainConfig tc = config.train;
        tc.k = k;
        tc.mode = mode;
        const auto start = std::chrono::steady_clock::now();
        TrainResult r = train(ds, tc);
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    };

    std::vector<BenchRow> rows;
    for (int k = 1; k <= kBenchMaxK; ++k) {
        BenchRow row;
        row.k = k;
        const TrainResult r = timed(k, MatchMode::Bruteforce, row.seconds);
        row.accuracy = r.mean.accuracy;
        row.f1 = r.mean.f1;
        export_templates(r.model.params().bank, config.out / ("templates_k" + std::to_string(k) + ".txt"));
        log << "k=" << k << " bruteforce: accuracy " << fmt(row.accuracy) << " f1 " << fmt(row.f1) << " time "
            << fmt(row.seconds) << " s\n";
        if (k == kBenchMaxK) {
            const TrainResult s = timed(k, MatchMode::Spectral, row.spectral_seconds);
            row.has_spectral = true;
            row.spectral_accuracy = s.mean.accuracy;
            row.spectral_f1 = s.mean.f1;
            export_templates(s.model.params().bank,
                             config.out / ("templates_k" + std::to_string(k) + "_spectral.txt"));
            log << "k=" << k << " spectral: accuracy " << fmt(row.spectral_accuracy) << " f1 "
                << fmt(row.spectral_f1) << " time " << fmt(row.spectral_seconds) << " s\n";
        }
        rows.push_back(row);
    }

    std::ofstream csv(config.out / "bench_k.csv");
    if (!csv) throw Error(ErrorKind::IoFailure, "cannot write bench_k.csv");
    csv << "k,accuracy,f1,time_s,spectral_accuracy,spectral_f1,spectral_time_s\n";
    for (const auto& r : rows) {
        csv << r.k << ',' << fmt(r.accuracy) << ',' << fmt(r.f1) << ',' << fmt(r.seconds) << ',';
        if (r.has_spectral) csv << fmt(r.spectral_accuracy) << ',' << fmt(r.spectral_f1) << ',' << fmt(r.spectral_seconds);
        else csv << ",,";
        csv << '\n';
    }
    csv.flush();
    if (!csv) throw Error(ErrorKind::IoFailure, "write failed for bench_k.csv");
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

// Binds long flags of one subcommand to string slots; only flags that were
// given on the command line take part in resolution.
struct FlagSet {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void add(CLI::App* app, const std::string& key, const std::string& help) {
        options[key] = app->add_option("--" + key, values[key], help);
    }

    void add_all(CLI::App* app, const std::vector<std::string>& keys) {
        app->add_option("--config", config_file, "flat key=value file; command-line flags win");
        for (const auto& key : keys) add(app, key, help_for(key));
    }

    std::map<std::string, std::string> given() const {
        std::map<std::string, std::string> out;
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) out[key] = values.at(key);
        return out;
    }

    static std::string help_for(const std::string& key) {
        static const std::map<std::string, std::string> help = {
            {"dataset", "BGD dataset file"},
            {"out", "output path"},
            {"model", "model.isocaps file"},
            {"graph", "graph id"},
            {"seed", "random seed"},
            {"threads", "worker threads"},
            {"k", "template size"},
            {"c", "template channels"},
            {"capsule-dim", "digit capsule dimension (0: k*k)"},
            {"iterations", "routing iterations"},
            {"mode", "bruteforce | spectral"},
            {"gamma", "padding for zero entries of the permutation vector"},
            {"delta", "reconstruction loss weight"},
            {"epochs", "training epochs"},
            {"batch", "mini-batch size"},
            {"lr", "learning rate"},
            {"weight-decay", "decoupled weight decay"},
            {"patience", "early stop after this many epochs without improvement (0: off)"},
            {"ablation", "none | length-only | no-residual | no-recon"},
            {"n", "nodes per graph"},
            {"per-class", "graphs per class"},
            {"motif", "motif size"},
            {"noise", "off-motif noise std"},
        };
        return help.at(key);
    }

    RunConfig resolve() const {
        std::map<std::string, std::string> file_values;
        if (!config_file.empty()) file_values = read_key_values(config_file);
        return resolve_run_config(file_values, given());
    }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Iso-CapsNet brain-graph classifier", "isocaps"};
    app.require_subcommand(1);

    FlagSet synth_flags, train_flags, eval_flags, recon_flags, bench_flags;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic orientation-discrimination dataset");
    synth_flags.add_all(synth, {"out", "seed", "n", "per-class", "motif", "noise"});
    CLI::App* train_cmd = app.add_subcommand("train", "3-fold cross-validated training");
    train_flags.add_all(train_cmd, kTrainKeys);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset");
    eval_flags.add_all(eval, {"model", "dataset", "out", "threads", "delta"});
    CLI::App* recon = app.add_subcommand("reconstruct", "export original and reconstructed matrices of one graph");
    recon_flags.add_all(recon, {"model", "dataset", "graph", "out"});
    CLI::App* bench = app.add_subcommand("bench-k", "sweep template size k = 1..5");
    std::vector<std::string> bench_keys;
    for (const auto& key : kTrainKeys)
        if (key != "k" && key != "mode") bench_keys.push_back(key);
    bench_flags.add_all(bench, bench_keys);

    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : kUsageExitCode;
    }

    try {
        if (synth->parsed()) {
            RunConfig c = synth_flags.resolve();
            out << "synth\n";
            echo_config(c, out);
            cmd_synth(c, out);
        } else if (train_cmd->parsed()) {
            RunConfig c = train_flags.resolve();
            out << "train\n";
            echo_config(c, out);
            cmd_train(c, out);
        } else if (eval->parsed()) {
            RunConfig c = eval_flags.resolve();
            out << "eval\n";
            echo_config(c, out);
            cmd_eval(c, out);
        } else if (recon->parsed()) {
            RunConfig c = recon_flags.resolve();
            out << "reconstruct\n";
            echo_config(c, out);
            cmd_reconstruct(c, out);
        } else if (bench->parsed()) {
            RunConfig c = bench_flags.resolve();
            out << "bench-k\n";
            echo_config(c, out);
            cmd_bench_k(c, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kInternalExitCode;
    }
    return 0;
}

}  // namespace isocaps
