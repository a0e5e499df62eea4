#pragma once

#include <filesystem>
#include <random>
#include <string_view>
#include <vector>

#include "isocaps/linalg.hpp"

namespace isocaps {

enum class MatchMode { Bruteforce, Spectral };

MatchMode parse_match_mode(std::string_view name);
std::string_view to_string(MatchMode mode);

/// Largest template size the exhaustive matcher accepts (6! = 720).
inline constexpr int kMaxBruteforceK = 6;

/// A permutation of k elements stored as its image: the matrix P has
/// P(i, image[i]) = 1, so (P K P^T)(i, j) = K(image[i], image[j]).
using Permutation = std::vector<int>;

Mat permutation_matrix(const Permutation& perm);

/// All k! permutations in lexicographic order of their images (identity first).
/// Throws KTooLarge for k > kMaxBruteforceK.
std::vector<Permutation> enumerate_permutation_images(int k);
std::vector<Mat> enumerate_permutations(int k);

/// Score and the matrix attaining it. For the exhaustive matcher the matrix is
/// a permutation; for the spectral matcher it is orthogonal.
struct MatchResult {
    double score = 0.0;
    Mat transform;
};

/// score = 1 - min_P ||P K P^T - A||_F over all permutations; ties go to the
/// lexicographically first permutation.
MatchResult match_bruteforce(const Mat& tmpl, const Mat& region);

/// Eigendecomposition of a real symmetric matrix.
/// values: descending. vectors: orthogonal, columns are eigenvectors, each
/// column flipped so its largest-magnitude entry is positive.
struct EigenPair {
    Vec values;
    Mat vectors;
};

/// Cyclic Jacobi rotations. Throws NotSymmetric or NoConvergence.
EigenPair sym_eigen(const Mat& x);

/// Relaxed matching over orthogonal matrices: score = 1 - ||L1 - L2||_F and
/// transform = U2 U1^T (sign matrix fixed to identity after canonicalization).
/// Both inputs must be symmetric.
MatchResult match_spectral(const Mat& tmpl, const Mat& region);

/// The learnable sub-graph templates, each k x k and kept symmetric.
struct TemplateBank {
    int k = 0;
    std::vector<Mat> templates;

    int channels() const { return static_cast<int>(templates.size()); }

    /// Entries uniform in [-0.5, 0.5], then symmetrized.
    static TemplateBank random(int k, int channels, std::mt19937_64& rng);

    void symmetrize();
};

/// Per-channel score matrices and optimal transforms for every k x k window.
struct IsoFeatures {
    MatchMode mode = MatchMode::Bruteforce;
    int k = 0;
    int positions = 0;  // n - k + 1

    std::vector<Mat> scores;                 // channel -> positions x positions
    std::vector<std::vector<double>> perms;  // channel -> positions^2 * k^2, (s, t, e) row-major

    // Backward-pass bookkeeping.
    std::vector<std::vector<double>> distance;    // channel -> per-window min distance
    std::vector<std::vector<int>> perm_index;     // bruteforce: channel -> per-window permutation id
    std::vector<EigenPair> template_eigen;        // spectral: per channel
    std::vector<Vec> region_values;               // spectral: per window eigenvalues of sym(A_st)

    int channels() const { return static_cast<int>(scores.size()); }
    int windows() const { return positions * positions; }

    const double* perm_vector(int channel, int s, int t) const {
        return perms[channel].data() + (static_cast<std::size_t>(s) * positions + t) * k * k;
    }
};

/// Slides every template over the adjacency matrix. Off-diagonal windows are
/// generally not symmetric; the spectral matcher then works on the symmetric
/// part and adds the (template-independent) skew part back into the distance.
/// Throws GraphTooSmall when n < k, KTooLarge for bruteforce with k > 6.
IsoFeatures extract_features(const Mat& adjacency, const TemplateBank& bank, MatchMode mode);

/// d(sum_{i,s,t} upstream_i(s,t) F_i(s,t)) / dK_i, symmetrized.
/// Bruteforce: envelope rule with the argmin held fixed.
/// Spectral: eigenvalue perturbation with eigenvectors held fixed.
/// Windows with distance below 1e-9 contribute nothing.
std::vector<Mat> grad_scores_wrt_templates(const Mat& adjacency, const TemplateBank& bank,
                                           const IsoFeatures& iso, const std::vector<Mat>& upstream);

void export_templates(const TemplateBank& bank, const std::filesystem::path& path);
TemplateBank import_templates(const std::filesystem::path& path);

}  // namespace isocaps
