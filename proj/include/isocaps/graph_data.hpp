#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isocaps/linalg.hpp"

namespace isocaps {

inline constexpr double kSymmetryTolerance = 1e-6;

/// One labeled brain graph: a symmetric weighted adjacency matrix over n
/// parcellated regions plus a binary label (0 = negative, 1 = positive).
struct BrainGraph {
    std::string id;
    int label = 0;
    Mat adjacency;

    int n() const { return static_cast<int>(adjacency.rows()); }
};

/// An ordered collection of graphs sharing one node count and node order.
struct GraphDataset {
    std::vector<BrainGraph> graphs;
    int n = 0;
    std::array<std::string, 2> class_names{"negative", "positive"};

    std::size_t size() const { return graphs.size(); }
    bool empty() const { return graphs.empty(); }

    /// Throws InconsistentNodeCount, AsymmetricMatrix or LabelOutOfRange.
    void validate() const;
};

/// Reads the BGD text format. Near-symmetric matrices (asymmetry <= 1e-6)
/// are symmetrized as (A + A^T) / 2.
GraphDataset load_dataset(const std::filesystem::path& path);

/// Writes the BGD text format with 9 decimals per entry.
void save_dataset(const GraphDataset& dataset, const std::filesystem::path& path);

/// Parameters of the orientation-discrimination generator.
struct SynthSpec {
    int n = 20;
    int count_per_class = 30;
    int motif_size = 4;
    double noise_std = 0.05;
    std::uint64_t seed = 7;
};

/// Graph pairs (class 0, class 1) that share off-motif noise and differ only
/// in the orientation of a planted motif: class 0 carries M, class 1 carries
/// Q M Q^T with Q the cyclic shift, at the same node positions.
GraphDataset generate_synthetic(const SynthSpec& spec);

/// The motif planted by generate_synthetic for this spec (class-0 form).
Mat synthetic_motif(const SynthSpec& spec);

/// First node index of the planted motif block.
int synthetic_motif_offset(const SynthSpec& spec);

/// The cyclic shift Q of m elements: Q(i, (i + 1) mod m) = 1.
Mat cyclic_shift(int m);

struct SplitPlan {
    std::vector<int> fold_assignments;
    std::uint64_t seed = 0;

    static constexpr int kFolds = 3;

    std::vector<std::size_t> members(int fold) const;
    std::vector<std::size_t> complement(int fold) const;
};

/// Stratified 3-fold assignment, deterministic per seed.
SplitPlan make_folds(const GraphDataset& dataset, std::uint64_t seed);

}  // namespace isocaps
