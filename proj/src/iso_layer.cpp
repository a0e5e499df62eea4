#include "isocaps/iso_layer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "isocaps/error.hpp"

namespace isocaps {

namespace {

constexpr double kZeroDistance = 1e-9;
constexpr int kMaxJacobiSweeps = 64;

void require_square(const Mat& m, int k, const char* what) {
    if (m.rows() != k || m.cols() != k)
        throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be " + std::to_string(k) + "x" +
                                                  std::to_string(k));
}

void require_symmetric(const Mat& m, const char* what) {
    if (m.rows() != m.cols()) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " is not square");
    if (m.size() > 0 && max_asymmetry(m) > 1e-6)
        throw Error(ErrorKind::NotSymmetric, std::string(what) + " is not symmetric");
}

// Row-major copy of the k x k window at (s, t).
void gather_window(const Mat& a, int s, int t, int k, double* out) {
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) out[i * k + j] = a(s + i, t + j);
}

// P K P^T for every permutation, flattened row-major, one block per permutation.
std::vector<double> permuted_templates(const Mat& tmpl, const std::vector<Permutation>& perms) {
    const int k = static_cast<int>(tmpl.rows());
    std::vector<double> out(perms.size() * k * k);
    for (std::size_t p = 0; p < perms.size(); ++p) {
        double* dst = out.data() + p * k * k;
        const auto& img = perms[p];
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) dst[i * k + j] = tmpl(img[i], img[j]);
    }
    return out;
}

struct BestPerm {
    int index = 0;
    double dist2 = 0.0;
};

BestPerm best_permutation(const std::vector<double>& permuted, std::size_t count, int k2,
                          const double* region) {
    BestPerm best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t p = 0; p < count; ++p) {
        const double* t = permuted.data() + p * k2;
        double d2 = 0.0;
        for (int e = 0; e < k2; ++e) {
            double d = t[e] - region[e];
            d2 += d * d;
        }
        if (d2 < best.dist2) best = {static_cast<int>(p), d2};
    }
    return best;
}

}  // namespace

MatchMode parse_match_mode(std::string_view name) {
    if (name == "bruteforce") return MatchMode::Bruteforce;
    if (name == "spectral") return MatchMode::Spectral;
    throw Error(ErrorKind::BadConfig, "unknown match mode '" + std::string(name) + "'");
}

std::string_view to_string(MatchMode mode) {
    return mode == MatchMode::Bruteforce ? "bruteforce" : "spectral";
}

Mat permutation_matrix(const Permutation& perm) {
    const int k = static_cast<int>(perm.size());
    Mat p = Mat::Zero(k, k);
    for (int i = 0; i < k; ++i) p(i, perm[i]) = 1.0;
    return p;
}

std::vector<Permutation> enumerate_permutation_images(int k) {
    if (k < 1) throw Error(ErrorKind::ShapeMismatch, "template size must be positive");
    if (k > kMaxBruteforceK)
        throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " exceeds the exhaustive limit of " +
                                              std::to_string(kMaxBruteforceK) + "; use spectral mode");
    Permutation img(k);
    std::iota(img.begin(), img.end(), 0);
    std::vector<Permutation> out;
    do {
        out.push_back(img);
    } while (std::next_permutation(img.begin(), img.end()));
    return out;
}

std::vector<Mat> enumerate_permutations(int k) {
    std::vector<Mat> out;
    for (const auto& p : enumerate_permutation_images(k)) out.push_back(permutation_matrix(p));
    return out;
}

MatchResult match_bruteforce(const Mat& tmpl, const Mat& region) {
    const int k = static_cast<int>(tmpl.rows());
    require_square(tmpl, k, "template");
    require_square(region, k, "region");
    const auto perms = enumerate_permutation_images(k);
    const auto permuted = permuted_templates(tmpl, perms);
    std::vector<double> a(k * k);
    gather_window(region, 0, 0, k, a.data());
    const BestPerm best = best_permutation(permuted, perms.size(), k * k, a.data());
    return {1.0 - std::sqrt(best.dist2), permutation_matrix(perms[best.index])};
}

EigenPair sym_eigen(const Mat& x) {
    require_symmetric(x, "matrix");
    const int k = static_cast<int>(x.rows());
    Mat a = symmetrized(x);
    Mat v = Mat::Identity(k, k);
    const double scale = std::max(1.0, a.norm());

    bool converged = false;
    for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < k; ++p)
            for (int q = p + 1; q < k; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-14 * scale) {
            converged = true;
            break;
        }
        for (int p = 0; p < k; ++p) {
            for (int q = p + 1; q < k; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int r = 0; r < k; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = a(r, p), arq = a(r, q);
                    a(r, p) = a(p, r) = c * arp - s * arq;
                    a(r, q) = a(q, r) = s * arp + c * arq;
                }
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = a(q, p) = 0.0;
                for (int r = 0; r < k; ++r) {
                    const double vrp = v(r, p), vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }
    if (!converged) {
        double off = 0.0;
        for (int p = 0; p < k; ++p)
            for (int q = p + 1; q < k; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) > 1e-14 * scale)
            throw Error(ErrorKind::NoConvergence, "Jacobi iteration exceeded its sweep budget");
    }

    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });

    EigenPair out;
    out.values.resize(k);
    out.vectors.resize(k, k);
    for (int c = 0; c < k; ++c) {
        out.values(c) = a(order[c], order[c]);
        Vec col = v.col(order[c]);
        const double peak = col.cwiseAbs().maxCoeff();
        for (int r = 0; r < k; ++r) {
            if (std::abs(col(r)) >= peak - 1e-12) {
                if (col(r) < 0) col = -col;
                break;
            }
        }
        out.vectors.col(c) = col;
    }
    return out;
}

MatchResult match_spectral(const Mat& tmpl, const Mat& region) {
    require_symmetric(tmpl, "template");
    require_symmetric(region, "region");
    if (tmpl.rows() != region.rows()) throw Error(ErrorKind::ShapeMismatch, "template/region size differ");
    const EigenPair e1 = sym_eigen(tmpl);
    const EigenPair e2 = sym_eigen(region);
    return {1.0 - (e1.values - e2.values).norm(), e2.vectors * e1.vectors.transpose()};
}

TemplateBank TemplateBank::random(int k, int channels, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    TemplateBank bank;
    bank.k = k;
    for (int c = 0; c < channels; ++c) {
        Mat t(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) t(i, j) = u(rng);
        bank.templates.push_back(symmetrized(t));
    }
    return bank;
}

void TemplateBank::symmetrize() {
    for (auto& t : templates) t = symmetrized(t);
}

IsoFeatures extract_features(const Mat& adjacency, const TemplateBank& bank, MatchMode mode) {
    const int n = static_cast<int>(adjacency.rows());
    const int k = bank.k;
    if (k < 1) throw Error(ErrorKind::ShapeMismatch, "template size must be positive");
    if (n < k)
        throw Error(ErrorKind::GraphTooSmall,
                    "graph has " + std::to_string(n) + " nodes, template size is " + std::to_string(k));
    for (const auto& t : bank.templates) require_square(t, k, "template");

    const int c = bank.channels();
    const int positions = n - k + 1;
    const int windows = positions * positions;
    const int k2 = k * k;

    IsoFeatures iso;
    iso.mode = mode;
    iso.k = k;
    iso.positions = positions;
    iso.scores.assign(c, Mat(positions, positions));
    iso.perms.assign(c, std::vector<double>(static_cast<std::size_t>(windows) * k2, 0.0));
    iso.distance.assign(c, std::vector<double>(windows));
    std::vector<double> region(k2);

    if (mode == MatchMode::Bruteforce) {
        const auto perms = enumerate_permutation_images(k);
        std::vector<std::vector<double>> permuted;
        for (const auto& t : bank.templates) permuted.push_back(permuted_templates(t, perms));
        iso.perm_index.assign(c, std::vector<int>(windows));
        for (int s = 0; s < positions; ++s) {
            for (int t = 0; t < positions; ++t) {
                gather_window(adjacency, s, t, k, region.data());
                const int w = s * positions + t;
                for (int ch = 0; ch < c; ++ch) {
                    const BestPerm best = best_permutation(permuted[ch], perms.size(), k2, region.data());
                    const double dist = std::sqrt(best.dist2);
                    iso.scores[ch](s, t) = 1.0 - dist;
                    iso.distance[ch][w] = dist;
                    iso.perm_index[ch][w] = best.index;
                    double* pv = iso.perms[ch].data() + static_cast<std::size_t>(w) * k2;
                    const auto& img = perms[best.index];
                    for (int i = 0; i < k; ++i) pv[i * k + img[i]] = 1.0;
                }
            }
        }
        return iso;
    }

    for (const auto& t : bank.templates) iso.template_eigen.push_back(sym_eigen(t));
    iso.region_values.resize(windows);
    for (int s = 0; s < positions; ++s) {
        for (int t = 0; t < positions; ++t) {
            const Mat block = adjacency.block(s, t, k, k);
            const Mat sym = symmetrized(block);
            const double skew2 = (0.5 * (block - block.transpose())).squaredNorm();
            const EigenPair reg = sym_eigen(sym);
            const int w = s * positions + t;
            iso.region_values[w] = reg.values;
            for (int ch = 0; ch < c; ++ch) {
                const EigenPair& te = iso.template_eigen[ch];
                const double dist = std::sqrt((te.values - reg.values).squaredNorm() + skew2);
                iso.scores[ch](s, t) = 1.0 - dist;
                iso.distance[ch][w] = dist;
                const Mat p = reg.vectors * te.vectors.transpose();
                double* pv = iso.perms[ch].data() + static_cast<std::size_t>(w) * k2;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) pv[i * k + j] = p(i, j);
            }
        }
    }
    return iso;
}

std::vector<Mat> grad_scores_wrt_templates(const Mat& adjacency, const TemplateBank& bank,
                                           const IsoFeatures& iso, const std::vector<Mat>& upstream) {
    const int c = bank.channels();
    const int k = bank.k;
    const int positions = iso.positions;
    if (iso.channels() != c || iso.k != k || static_cast<int>(upstream.size()) != c)
        throw Error(ErrorKind::ShapeMismatch, "features, bank and upstream disagree on channels");
    for (const auto& u : upstream)
        if (u.rows() != positions || u.cols() != positions)
            throw Error(ErrorKind::ShapeMismatch, "upstream gradient shape does not match scores");

    std::vector<Mat> grads(c, Mat::Zero(k, k));
    if (iso.mode == MatchMode::Bruteforce) {
        const auto perms = enumerate_permutation_images(k);
        for (int ch = 0; ch < c; ++ch) {
            const Mat& tmpl = bank.templates[ch];
            Mat& g = grads[ch];
            for (int s = 0; s < positions; ++s) {
                for (int t = 0; t < positions; ++t) {
                    const double up = upstream[ch](s, t);
                    const int w = s * positions + t;
                    const double dist = iso.distance[ch][w];
                    if (up == 0.0 || dist < kZeroDistance) continue;
                    const auto& img = perms[iso.perm_index[ch][w]];
                    // dF/dK = -P^T D P / ||D||, D = P K P^T - A_st.
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j) {
                            const double d = tmpl(img[i], img[j]) - adjacency(s + i, t + j);
                            g(img[i], img[j]) -= up * d / dist;
                        }
                }
            }
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            const EigenPair& te = iso.template_eigen[ch];
            Vec weight = Vec::Zero(k);
            for (int w = 0; w < positions * positions; ++w) {
                const double up = upstream[ch](w / positions, w % positions);
                const double dist = iso.distance[ch][w];
                if (up == 0.0 || dist < kZeroDistance) continue;
                weight -= up / dist * (te.values - iso.region_values[w]);
            }
            // d(alpha_r)/dK = u_r u_r^T with eigenvectors held fixed.
            grads[ch] = te.vectors * weight.asDiagonal() * te.vectors.transpose();
        }
    }
    for (auto& g : grads) g = symmetrized(g);
    return grads;
}

void export_templates(const TemplateBank& bank, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    char buf[40];
    for (int i = 0; i < bank.channels(); ++i) {
        out << "template " << i << " k=" << bank.k << '\n';
        const Mat& t = bank.templates[i];
        for (int r = 0; r < bank.k; ++r) {
            for (int c = 0; c < bank.k; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", t(r, c));
                if (c) out << ' ';
                out << buf;
            }
            out << '\n';
        }
    }
    out.flush();
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

TemplateBank import_templates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    TemplateBank bank;
    std::string word;
    while (in >> word) {
        int index = 0;
        std::string kfield;
        if (word != "template" || !(in >> index >> kfield) || kfield.rfind("k=", 0) != 0 ||
            index != bank.channels())
            throw Error(ErrorKind::MalformedFile, "bad template header in " + path.string());
        const int k = std::stoi(kfield.substr(2));
        if (k < 1 || (bank.k != 0 && k != bank.k))
            throw Error(ErrorKind::MalformedFile, "inconsistent template size in " + path.string());
        bank.k = k;
        Mat t(k, k);
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < k; ++c)
                if (!(in >> t(r, c))) throw Error(ErrorKind::MalformedFile, "truncated template in " + path.string());
        bank.templates.push_back(std::move(t));
    }
    return bank;
}

}  // namespace isocaps
