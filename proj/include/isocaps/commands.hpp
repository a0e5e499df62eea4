#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "isocaps/graph_data.hpp"
#include "isocaps/trainer.hpp"

namespace isocaps {

/// Exit code for command-line usage errors (unknown flag, missing value).
inline constexpr int kUsageExitCode = 2;
/// Exit code for failures that carry no ErrorKind.
inline constexpr int kInternalExitCode = 1;

/// Everything a command may need. Keys of the flat config file are the long
/// flag names without dashes, e.g. `lr=0.005` or `per-class=30`.
struct RunConfig {
    TrainConfig train;
    SynthSpec synth;
    std::filesystem::path dataset;
    std::filesystem::path out;
    std::filesystem::path model;
    std::string graph;

    /// Sets one value by key. Throws BadConfig on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);

    /// Every key with its effective value, in the form accepted by set().
    std::map<std::string, std::string> resolved() const;
};

/// Applies config-file values first, then command-line values (which win).
RunConfig resolve_run_config(const std::map<std::string, std::string>& file_values,
                             const std::map<std::string, std::string>& flag_values);

/// One row of the k sweep; spectral fields are set only on the k = 5 row.
struct BenchRow {
    int k = 0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double seconds = 0.0;
    bool has_spectral = false;
    double spectral_accuracy = 0.0;
    double spectral_f1 = 0.0;
    double spectral_seconds = 0.0;
};

inline constexpr int kBenchMaxK = 5;

void cmd_synth(const RunConfig& config, std::ostream& log);
TrainResult cmd_train(const RunConfig& config, std::ostream& log);
Metrics cmd_eval(const RunConfig& config, std::ostream& log);
/// Returns the reconstructed matrix; writes <id>_original/_reconstructed .txt and .pgm.
Mat cmd_reconstruct(const RunConfig& config, std::ostream& log);
std::vector<BenchRow> cmd_bench_k(const RunConfig& config, std::ostream& log);

/// Parses argv-style arguments (args[0] is the program name), runs the
/// command and returns the process exit code: 0 on success, the ErrorKind
/// value for library errors, kUsageExitCode for bad command lines.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace isocaps
