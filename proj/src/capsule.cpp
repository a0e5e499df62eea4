#include "isocaps/capsule.hpp"

#include <algorithm>
#include <cmath>

#include "isocaps/error.hpp"

namespace isocaps {

PrimaryCapsules build_primary_capsules(const IsoFeatures& iso, double gamma, Orientation orientation) {
    if (!(gamma >= -1.0 && gamma <= 1.0))
        throw Error(ErrorKind::BadGamma, "gamma must lie in [-1, 1], got " + std::to_string(gamma));
    const int c = iso.channels();
    const int positions = iso.positions;
    const int dim = iso.k * iso.k;

    PrimaryCapsules caps;
    caps.channels = c;
    caps.positions = positions;
    caps.gamma = gamma;
    const int count = c * positions * positions;
    caps.vectors.resize(count, dim);
    caps.direction.resize(count, dim);
    caps.padded.assign(static_cast<std::size_t>(count) * dim, 0);

    const double constant = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int ch = 0; ch < c; ++ch) {
        for (int s = 0; s < positions; ++s) {
            for (int t = 0; t < positions; ++t) {
                const int row = caps.row(ch, s, t);
                if (orientation == Orientation::Constant) {
                    caps.direction.row(row).setConstant(constant);
                } else {
                    Eigen::Map<const Eigen::RowVectorXd> p(iso.perm_vector(ch, s, t), dim);
                    const double norm = p.norm();
                    if (norm > 0.0)
                        caps.direction.row(row) = p / norm;
                    else
                        caps.direction.row(row).setZero();
                }
                const double score = iso.scores[ch](s, t);
                for (int e = 0; e < dim; ++e) {
                    const double v = caps.direction(row, e) * score;
                    if (std::abs(v) < kPaddingThreshold) {
                        caps.vectors(row, e) = gamma;
                        caps.padded[static_cast<std::size_t>(row) * dim + e] = 1;
                    } else {
                        caps.vectors(row, e) = v;
                    }
                }
            }
        }
    }
    return caps;
}

std::vector<Mat> primary_capsules_backward(const PrimaryCapsules& caps, const Mat& grad_vectors) {
    if (grad_vectors.rows() != caps.count() || grad_vectors.cols() != caps.dim())
        throw Error(ErrorKind::ShapeMismatch, "capsule gradient shape mismatch");
    const int dim = caps.dim();
    std::vector<Mat> grads(caps.channels, Mat::Zero(caps.positions, caps.positions));
    for (int ch = 0; ch < caps.channels; ++ch)
        for (int s = 0; s < caps.positions; ++s)
            for (int t = 0; t < caps.positions; ++t) {
                const int row = caps.row(ch, s, t);
                double g = 0.0;
                for (int e = 0; e < dim; ++e)
                    if (!caps.padded[static_cast<std::size_t>(row) * dim + e])
                        g += caps.direction(row, e) * grad_vectors(row, e);
                grads[ch](s, t) = g;
            }
    return grads;
}

Vec squash(const Vec& x) {
    const double n = x.norm();
    return x * (n / (1.0 + n * n));
}

Vec squash_backward(const Vec& x, const Vec& grad_output) {
    // y = x g(n), g(n) = n / (1 + n^2), dy/dx = g I + g'(n) x x^T / n.
    const double n = x.norm();
    const double denom = 1.0 + n * n;
    const double g = n / denom;
    const double dg = (1.0 - n * n) / (denom * denom);
    return g * grad_output + (dg / (n + 1e-12)) * x.dot(grad_output) * x;
}

Mat leaky_softmax(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double peak = std::max(0.0, logits.row(i).maxCoeff());
        double total = std::exp(-peak);  // orphan logit 0
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            out(i, j) = std::exp(logits(i, j) - peak);
            total += out(i, j);
        }
        out.row(i) /= total;
    }
    return out;
}

namespace {

// Row-major rows are contiguous; these are the hot loops of routing.
inline double dot_row(const double* a, const double* b, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index e = 0; e < n; ++e) s += a[e] * b[e];
    return s;
}

inline void axpy_row(double w, const double* x, double* y, Eigen::Index n) {
    for (Eigen::Index e = 0; e < n; ++e) y[e] += w * x[e];
}

}  // namespace

DigitCapsules dynamic_routing(const PrimaryCapsules& primary, const Mat& transform, int iterations, int classes) {
    if (iterations < 1)
        throw Error(ErrorKind::BadIterations, "routing needs at least one iteration, got " + std::to_string(iterations));
    if (transform.rows() != primary.dim())
        throw Error(ErrorKind::ShapeMismatch, "routing transform rows must equal the capsule dimension");

    DigitCapsules out;
    out.predictions.noalias() = primary.vectors * transform;
    const Mat& uhat = out.predictions;
    const Eigen::Index count = uhat.rows(), dim = uhat.cols();
    Mat logits = Mat::Zero(count, classes);
    for (int r = 0; r < iterations; ++r) {
        Mat alpha = leaky_softmax(logits);
        Mat pre = Mat::Zero(classes, dim);
        for (Eigen::Index i = 0; i < count; ++i)
            for (int j = 0; j < classes; ++j) axpy_row(alpha(i, j), &uhat(i, 0), &pre(j, 0), dim);
        Mat caps(classes, dim);
        for (int j = 0; j < classes; ++j) caps.row(j) = squash(pre.row(j).transpose()).transpose();
        out.logits.push_back(logits);
        out.coefficients.push_back(std::move(alpha));
        out.pre_squash.push_back(std::move(pre));
        if (r + 1 < iterations)
            for (Eigen::Index i = 0; i < count; ++i)
                for (int j = 0; j < classes; ++j) logits(i, j) += dot_row(&uhat(i, 0), &caps(j, 0), dim);
        out.capsules.push_back(std::move(caps));
    }
    return out;
}

RoutingGradients dynamic_routing_backward(const PrimaryCapsules& primary, const Mat& transform,
                                          const DigitCapsules& digit, const Mat& grad_output) {
    const Mat& uhat = digit.predictions;
    const int iters = digit.iterations();
    const Eigen::Index classes = digit.output().rows();
    const Eigen::Index count = uhat.rows(), dim = uhat.cols();
    if (grad_output.rows() != classes || grad_output.cols() != dim)
        throw Error(ErrorKind::ShapeMismatch, "digit capsule gradient shape mismatch");

    Mat d_uhat = Mat::Zero(count, dim);
    Mat d_logits_next = Mat::Zero(count, classes);  // dL/d(beta entering iteration r + 1)
    Mat d_logits(count, classes);
    Vec d_alpha(classes);
    for (int r = iters - 1; r >= 0; --r) {
        Mat d_caps = (r == iters - 1) ? grad_output : Mat::Zero(classes, dim);
        if (r + 1 < iters) {
            // beta_{r+1} = beta_r + u_hat c_r^T
            const Mat& caps = digit.capsules[r];
            for (Eigen::Index i = 0; i < count; ++i)
                for (Eigen::Index j = 0; j < classes; ++j) {
                    const double g = d_logits_next(i, j);
                    axpy_row(g, &uhat(i, 0), &d_caps(j, 0), dim);
                    axpy_row(g, &caps(j, 0), &d_uhat(i, 0), dim);
                }
            d_logits = d_logits_next;
        } else {
            d_logits.setZero();
        }
        Mat d_pre(classes, dim);
        for (Eigen::Index j = 0; j < classes; ++j)
            d_pre.row(j) = squash_backward(digit.pre_squash[r].row(j).transpose(), d_caps.row(j).transpose()).transpose();
        const Mat& alpha = digit.coefficients[r];
        for (Eigen::Index i = 0; i < count; ++i) {
            double inner = 0.0;
            for (Eigen::Index j = 0; j < classes; ++j) {
                d_alpha(j) = dot_row(&uhat(i, 0), &d_pre(j, 0), dim);
                inner += alpha(i, j) * d_alpha(j);
                axpy_row(alpha(i, j), &d_pre(j, 0), &d_uhat(i, 0), dim);
            }
            for (Eigen::Index j = 0; j < classes; ++j) d_logits(i, j) += alpha(i, j) * (d_alpha(j) - inner);
        }
        d_logits_next.swap(d_logits);
    }
    RoutingGradients g;
    g.transform.noalias() = primary.vectors.transpose() * d_uhat;
    g.vectors.noalias() = d_uhat * transform.transpose();
    return g;
}

namespace {

Vec softmax(const Eigen::Ref<const Vec>& x) {
    const double peak = x.maxCoeff();
    Vec e = (x.array() - peak).exp().matrix();
    return e / e.sum();
}

}  // namespace

ResidualTrace residual_capsules(const IsoFeatures& iso, const std::vector<Mlp>& heads) {
    const int windows = iso.windows();
    ResidualTrace tr;
    tr.input.resize(static_cast<Eigen::Index>(iso.channels()) * windows);
    for (int ch = 0; ch < iso.channels(); ++ch) {
        if (!iso.scores[ch].allFinite()) throw Error(ErrorKind::ShapeMismatch, "non-finite isomorphic scores");
        Eigen::Map<const Vec> flat(iso.scores[ch].data(), windows);
        tr.input.segment(static_cast<Eigen::Index>(ch) * windows, windows) = softmax(flat);
    }
    if (heads.empty()) throw Error(ErrorKind::ShapeMismatch, "no residual heads");
    for (const auto& h : heads)
        if (h.in() != tr.input.size())
            throw Error(ErrorKind::ShapeMismatch, "residual head expects " + std::to_string(h.in()) +
                                                      " inputs, features provide " + std::to_string(tr.input.size()));
    tr.capsules.resize(static_cast<Eigen::Index>(heads.size()), heads.front().out());
    for (std::size_t j = 0; j < heads.size(); ++j) {
        tr.heads.push_back(heads[j].forward(tr.input));
        tr.capsules.row(static_cast<Eigen::Index>(j)) = tr.heads.back().output.transpose();
    }
    return tr;
}

std::vector<Mat> residual_capsules_backward(const ResidualTrace& trace, const std::vector<Mlp>& heads,
                                            const Mat& grad_capsules, std::vector<Mlp>& head_grads,
                                            int positions) {
    Vec d_input = Vec::Zero(trace.input.size());
    for (std::size_t j = 0; j < heads.size(); ++j)
        d_input += heads[j].backward(trace.heads[j], grad_capsules.row(static_cast<Eigen::Index>(j)).transpose(),
                                     head_grads[j]);
    const int windows = positions * positions;
    const int channels = static_cast<int>(trace.input.size() / windows);
    std::vector<Mat> grads(channels, Mat(positions, positions));
    for (int ch = 0; ch < channels; ++ch) {
        const auto s = trace.input.segment(static_cast<Eigen::Index>(ch) * windows, windows);
        const auto d = d_input.segment(static_cast<Eigen::Index>(ch) * windows, windows);
        const double inner = s.dot(d);
        Eigen::Map<Vec> out(grads[ch].data(), windows);
        out = s.cwiseProduct(d - Vec::Constant(windows, inner));
    }
    return grads;
}

Mat combine_heads(const Mat& digit, const Mat& residual) {
    if (digit.rows() != residual.rows() || digit.cols() != residual.cols())
        throw Error(ErrorKind::ShapeMismatch, "digit and residual capsules differ in shape");
    return digit + residual;
}

ReconstructionTrace reconstruct(const Mat& class_capsules, const Mlp& decoder, int n) {
    Eigen::Map<const Vec> flat(class_capsules.data(), class_capsules.size());
    if (flat.size() != decoder.in())
        throw Error(ErrorKind::ShapeMismatch, "decoder expects " + std::to_string(decoder.in()) + " inputs");
    if (decoder.out() != n * n) throw Error(ErrorKind::ShapeMismatch, "decoder output is not n*n");
    ReconstructionTrace tr;
    tr.mlp = decoder.forward(flat);
    tr.adjacency = Eigen::Map<const Mat>(tr.mlp.output.data(), n, n);
    return tr;
}

Classification classify(const Mat& class_capsules) {
    Classification c;
    for (Eigen::Index j = 0; j < class_capsules.rows(); ++j) {
        c.lengths.push_back(class_capsules.row(j).norm());
        if (c.lengths.back() > c.lengths[static_cast<std::size_t>(c.label)]) c.label = static_cast<int>(j);
    }
    return c;
}

}  // namespace isocaps
