#pragma once

#include <vector>

#include "isocaps/iso_layer.hpp"
#include "isocaps/linalg.hpp"
#include "isocaps/mlp.hpp"

namespace isocaps {

/// Entries of a primary capsule with magnitude below this are padded.
inline constexpr double kPaddingThreshold = 1e-9;

/// How the capsule direction is formed. `Constant` drops the optimal
/// transform and keeps only the score (the length-only ablation).
enum class Orientation { Transform, Constant };

/// Primary capsule tensor, one row per (channel, s, t), row index
/// (channel * positions + s) * positions + t. Rows have length k^2.
struct PrimaryCapsules {
    int channels = 0;
    int positions = 0;
    double gamma = 0.0;
    Mat vectors;     // padded capsules m_{i,s,t}
    Mat direction;   // unit direction before scaling by the score
    std::vector<unsigned char> padded;  // per entry of `vectors`

    int count() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
    int row(int channel, int s, int t) const { return (channel * positions + s) * positions + t; }
};

/// m = vec(P) / ||vec(P)|| * F, then entries below 1e-9 in magnitude become gamma.
/// Throws BadGamma when gamma is outside [-1, 1].
PrimaryCapsules build_primary_capsules(const IsoFeatures& iso, double gamma,
                                       Orientation orientation = Orientation::Transform);

/// dL/dF per channel from dL/dm. Padded entries are constants.
std::vector<Mat> primary_capsules_backward(const PrimaryCapsules& caps, const Mat& grad_vectors);

/// x * ||x|| / (1 + ||x||^2), i.e. norm ||x||^2 / (1 + ||x||^2) in the direction of x.
Vec squash(const Vec& x);
Vec squash_backward(const Vec& x, const Vec& grad_output);

/// Softmax over the class logits plus a fixed orphan logit of 0, row-wise.
Mat leaky_softmax(const Mat& logits);

/// Routing state. Index r holds the values used/produced by iteration r.
struct DigitCapsules {
    Mat predictions;                  // u_hat = m W, count x d_c
    std::vector<Mat> logits;          // beta entering iteration r, count x classes
    std::vector<Mat> coefficients;    // alpha of iteration r
    std::vector<Mat> pre_squash;      // c_bar, classes x d_c
    std::vector<Mat> capsules;        // c = squash(c_bar), classes x d_c

    int iterations() const { return static_cast<int>(capsules.size()); }
    const Mat& output() const { return capsules.back(); }
};

/// Routing by agreement through one shared transform W (d_m x d_c):
/// beta = 0; repeat: alpha = leaky_softmax(beta); c_j = squash(sum alpha_j u_hat);
/// beta += c_j . u_hat. Throws BadIterations when iterations < 1.
DigitCapsules dynamic_routing(const PrimaryCapsules& primary, const Mat& transform, int iterations,
                              int classes = 2);

struct RoutingGradients {
    Mat transform;  // d_m x d_c
    Mat vectors;    // count x d_m
};

/// Differentiates through every unrolled iteration, including alpha(beta).
RoutingGradients dynamic_routing_backward(const PrimaryCapsules& primary, const Mat& transform,
                                          const DigitCapsules& digit, const Mat& grad_output);

/// Per-channel softmax over all windows, concatenated, fed to one MLP per class.
struct ResidualTrace {
    Vec input;                  // concatenated normalized scores
    std::vector<MlpTrace> heads;
    Mat capsules;               // classes x d_c
};

ResidualTrace residual_capsules(const IsoFeatures& iso, const std::vector<Mlp>& heads);

/// Accumulates head gradients and returns dL/dF per channel.
std::vector<Mat> residual_capsules_backward(const ResidualTrace& trace, const std::vector<Mlp>& heads,
                                            const Mat& grad_capsules, std::vector<Mlp>& head_grads,
                                            int positions);

/// v_j = r_j + c_j.
Mat combine_heads(const Mat& digit, const Mat& residual);

struct ReconstructionTrace {
    MlpTrace mlp;
    Mat adjacency;  // n x n, row-major reshape of the decoder output
};

/// Decodes the concatenation of all class capsules into an n x n matrix.
ReconstructionTrace reconstruct(const Mat& class_capsules, const Mlp& decoder, int n);

struct Classification {
    int label = 0;
    std::vector<double> lengths;
};

/// argmax_j ||v_j||, ties to the lowest index.
Classification classify(const Mat& class_capsules);

}  // namespace isocaps
