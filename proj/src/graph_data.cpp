#include "isocaps/graph_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "isocaps/error.hpp"

namespace isocaps {

namespace {

std::vector<std::string> split_tokens(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

bool parse_double(const std::string& s, double& out) {
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end != s.c_str() && *end == '\0' && std::isfinite(out);
}

bool parse_int(const std::string& s, long long& out) {
    char* end = nullptr;
    out = std::strtoll(s.c_str(), &end, 10);
    return end != s.c_str() && *end == '\0';
}

// Line reader that skips blank lines and tracks line numbers for messages.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    bool next(std::vector<std::string>& tokens) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            tokens = split_tokens(line);
            if (!tokens.empty()) return true;
        }
        return false;
    }

    int line_no() const { return line_no_; }

private:
    std::istream& in_;
    int line_no_ = 0;
};

void check_graph(const BrainGraph& g, int n) {
    if (g.n() != n || g.adjacency.cols() != n)
        throw Error(ErrorKind::InconsistentNodeCount,
                    "graph '" + g.id + "' has " + std::to_string(g.n()) + " nodes, expected " +
                        std::to_string(n));
    if (g.label != 0 && g.label != 1)
        throw Error(ErrorKind::LabelOutOfRange,
                    "graph '" + g.id + "' has label " + std::to_string(g.label));
    if (n > 0 && max_asymmetry(g.adjacency) > kSymmetryTolerance)
        throw Error(ErrorKind::AsymmetricMatrix, "graph '" + g.id + "' is not symmetric");
}

}  // namespace

void GraphDataset::validate() const {
    for (const auto& g : graphs) check_graph(g, n);
}

GraphDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    LineReader reader(in);
    std::vector<std::string> tok;

    auto malformed = [&](const std::string& why) {
        return Error(ErrorKind::MalformedFile,
                     path.string() + ":" + std::to_string(reader.line_no()) + ": " + why);
    };

    if (!reader.next(tok) || tok.size() != 2) throw malformed("expected header '<num_graphs> <n>'");
    long long count = 0, n = 0;
    if (!parse_int(tok[0], count) || !parse_int(tok[1], n) || count < 0 || n < 1)
        throw malformed("bad header values");

    GraphDataset ds;
    ds.n = static_cast<int>(n);
    ds.graphs.reserve(static_cast<std::size_t>(count));
    for (long long gi = 0; gi < count; ++gi) {
        if (!reader.next(tok)) throw malformed("missing graph header for graph " + std::to_string(gi));
        if (tok.size() != 2) throw malformed("expected '<id> <label>'");
        BrainGraph g;
        g.id = tok[0];
        long long label = 0;
        if (!parse_int(tok[1], label)) throw malformed("bad label '" + tok[1] + "'");
        if (label != 0 && label != 1)
            throw Error(ErrorKind::LabelOutOfRange,
                        "graph '" + g.id + "' has label " + std::to_string(label));
        g.label = static_cast<int>(label);
        g.adjacency.resize(n, n);
        for (long long r = 0; r < n; ++r) {
            if (!reader.next(tok))
                throw malformed("graph '" + g.id + "' has only " + std::to_string(r) + " rows");
            if (static_cast<long long>(tok.size()) != n) {
                if (tok.size() == 2 && r > 0)
                    throw malformed("graph '" + g.id + "' has only " + std::to_string(r) + " rows");
                throw Error(ErrorKind::InconsistentNodeCount,
                            "graph '" + g.id + "' row " + std::to_string(r) + " has " +
                                std::to_string(tok.size()) + " entries, expected " + std::to_string(n));
            }
            for (long long c = 0; c < n; ++c) {
                double v = 0;
                if (!parse_double(tok[c], v)) throw malformed("bad number '" + tok[c] + "'");
                if (std::abs(v) > 1.0 + 1e-9) throw malformed("entry outside [-1, 1]: " + tok[c]);
                g.adjacency(r, c) = v;
            }
        }
        if (max_asymmetry(g.adjacency) > kSymmetryTolerance)
            throw Error(ErrorKind::AsymmetricMatrix, "graph '" + g.id + "' is not symmetric");
        g.adjacency = symmetrized(g.adjacency);
        ds.graphs.push_back(std::move(g));
    }
    if (reader.next(tok)) throw malformed("trailing content after last graph");
    return ds;
}

void save_dataset(const GraphDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    out << dataset.graphs.size() << ' ' << dataset.n << '\n';
    char buf[32];
    for (const auto& g : dataset.graphs) {
        out << g.id << ' ' << g.label << '\n';
        for (int r = 0; r < g.n(); ++r) {
            for (int c = 0; c < g.n(); ++c) {
                std::snprintf(buf, sizeof buf, "%.9f", g.adjacency(r, c));
                if (c) out << ' ';
                out << buf;
            }
            out << '\n';
        }
    }
    out.flush();
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic orientation-discrimination data

namespace {

// Amplitude of the non-circulant part of the motif. The circulant part is
// invariant under the cyclic shift, so this is the only content that differs
// between the two orientations inside any window that does not cover the
// whole motif.
constexpr double kMotifAsymmetry = 0.05;

void check_spec(const SynthSpec& spec) {
    if (spec.n < 1) throw Error(ErrorKind::BadSpec, "n must be positive");
    if (spec.motif_size < 2) throw Error(ErrorKind::BadSpec, "motif size must be at least 2");
    if (spec.motif_size > spec.n)
        throw Error(ErrorKind::BadSpec, "motif size " + std::to_string(spec.motif_size) +
                                            " exceeds n = " + std::to_string(spec.n));
    if (spec.count_per_class < 1) throw Error(ErrorKind::BadSpec, "count per class must be >= 1");
    if (!(spec.noise_std >= 0.0) || !std::isfinite(spec.noise_std))
        throw Error(ErrorKind::BadSpec, "noise std must be non-negative");
}

}  // namespace

Mat cyclic_shift(int m) {
    Mat q = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) q(i, (i + 1) % m) = 1.0;
    return q;
}

int synthetic_motif_offset(const SynthSpec& spec) {
    return (spec.n - spec.motif_size) / 2;
}

Mat synthetic_motif(const SynthSpec& spec) {
    check_spec(spec);
    const int m = spec.motif_size;
    std::mt19937_64 rng(spec.seed ^ 0x6d6f746966ULL);
    std::uniform_real_distribution<double> mag(0.3, 0.9);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::bernoulli_distribution coin(0.5);

    // Symmetric circulant core: entry depends on the cyclic distance only.
    std::vector<double> band(m / 2 + 1);
    band[0] = mag(rng);
    for (std::size_t d = 1; d < band.size(); ++d) band[d] = coin(rng) ? mag(rng) : -mag(rng);

    const Mat q = cyclic_shift(m);
    for (;;) {
        Mat motif(m, m);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b) {
                int d = std::abs(a - b);
                motif(a, b) = band[std::min(d, m - d)];
            }
        Mat noise(m, m);
        for (int a = 0; a < m; ++a)
            for (int b = a; b < m; ++b) noise(a, b) = noise(b, a) = kMotifAsymmetry * unit(rng);
        motif = (motif + noise).cwiseMax(-1.0).cwiseMin(1.0);
        Mat rotated = q * motif * q.transpose();
        if ((rotated - motif).cwiseAbs().maxCoeff() > 0.2 * kMotifAsymmetry) return motif;
    }
}

GraphDataset generate_synthetic(const SynthSpec& spec) {
    check_spec(spec);
    const int n = spec.n, m = spec.motif_size;
    const int off = synthetic_motif_offset(spec);
    const Mat motif = synthetic_motif(spec);
    const Mat q = cyclic_shift(m);
    const Mat rotated = q * motif * q.transpose();

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto in_motif = [&](int a) { return a >= off && a < off + m; };

    GraphDataset ds;
    ds.n = n;
    ds.graphs.reserve(2 * static_cast<std::size_t>(spec.count_per_class));
    char id[64];
    for (int pair = 0; pair < spec.count_per_class; ++pair) {
        Mat base = Mat::Zero(n, n);
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) {
                if (in_motif(a) && in_motif(b)) continue;
                double v = spec.noise_std > 0.0 ? spec.noise_std * gauss(rng) : 0.0;
                base(a, b) = base(b, a) = v;
            }
        for (int label = 0; label < 2; ++label) {
            BrainGraph g;
            std::snprintf(id, sizeof id, "p%04d_c%d", pair, label);
            g.id = id;
            g.label = label;
            g.adjacency = base;
            g.adjacency.block(off, off, m, m) = label == 0 ? motif : rotated;
            g.adjacency = g.adjacency.cwiseMax(-1.0).cwiseMin(1.0);
            ds.graphs.push_back(std::move(g));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Cross-validation folds

std::vector<std::size_t> SplitPlan::members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_assignments.size(); ++i)
        if (fold_assignments[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> SplitPlan::complement(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_assignments.size(); ++i)
        if (fold_assignments[i] != fold) out.push_back(i);
    return out;
}

SplitPlan make_folds(const GraphDataset& dataset, std::uint64_t seed) {
    SplitPlan plan;
    plan.seed = seed;
    plan.fold_assignments.assign(dataset.size(), 0);
    std::mt19937_64 rng(seed);

    // Shuffle each class separately, then deal the concatenation round-robin.
    // Fold sizes differ by at most one and each class is spread evenly.
    std::size_t dealt = 0;
    for (int label = 0; label < 2; ++label) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset.graphs[i].label == label) idx.push_back(i);
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(idx[i - 1], idx[pick(rng)]);
        }
        for (std::size_t i : idx) plan.fold_assignments[i] = static_cast<int>(dealt++ % SplitPlan::kFolds);
    }
    return plan;
}

}  // namespace isocaps
