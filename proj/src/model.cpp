#include "isocaps/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "isocaps/error.hpp"

namespace isocaps {

Ablation parse_ablation(std::string_view name) {
    if (name == "none") return Ablation::None;
    if (name == "length-only") return Ablation::LengthOnly;
    if (name == "no-residual") return Ablation::NoResidual;
    if (name == "no-recon") return Ablation::NoRecon;
    throw Error(ErrorKind::BadConfig, "unknown ablation '" + std::string(name) + "'");
}

std::string_view to_string(Ablation ablation) {
    switch (ablation) {
        case Ablation::None: return "none";
        case Ablation::LengthOnly: return "length-only";
        case Ablation::NoResidual: return "no-residual";
        case Ablation::NoRecon: return "no-recon";
    }
    return "none";
}

void ModelConfig::validate() const {
    if (k < 1) throw Error(ErrorKind::BadConfig, "k must be positive");
    if (n < k)
        throw Error(ErrorKind::GraphTooSmall, "n = " + std::to_string(n) + " is smaller than k = " + std::to_string(k));
    if (mode == MatchMode::Bruteforce && k > kMaxBruteforceK)
        throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " needs spectral mode");
    if (channels < 1 || channels > 16) throw Error(ErrorKind::BadConfig, "channel count must be in 1..16");
    if (capsule_dim < 0) throw Error(ErrorKind::BadConfig, "capsule dimension must be positive");
    if (!(gamma >= -1.0 && gamma <= 1.0)) throw Error(ErrorKind::BadGamma, "gamma must lie in [-1, 1]");
    if (routing_iterations < 1) throw Error(ErrorKind::BadIterations, "routing needs at least one iteration");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.bank = TemplateBank::random(config.k, config.channels, rng);

    const int dm = config.primary_dim(), dc = config.digit_dim();
    const double limit = std::sqrt(6.0 / (dm + dc));
    std::uniform_real_distribution<double> u(-limit, limit);
    p.transform.resize(dm, dc);
    for (int r = 0; r < dm; ++r)
        for (int c = 0; c < dc; ++c) p.transform(r, c) = u(rng);

    const int features = config.channels * config.positions() * config.positions();
    for (int j = 0; j < kClasses; ++j)
        p.residual.push_back(Mlp::create({features, kResidualHidden, dc}, OutputActivation::Identity, rng));
    p.decoder = Mlp::create({kClasses * dc, kDecoderHidden1, kDecoderHidden2, config.n * config.n},
                            OutputActivation::Tanh, rng);
    return p;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z;
    z.bank.k = bank.k;
    for (const auto& t : bank.templates) z.bank.templates.push_back(Mat::Zero(t.rows(), t.cols()));
    z.transform = Mat::Zero(transform.rows(), transform.cols());
    for (const auto& r : residual) z.residual.push_back(r.zeros_like());
    z.decoder = decoder.zeros_like();
    return z;
}

std::vector<ModelParams::TensorView> ModelParams::views() {
    std::vector<TensorView> out;
    for_each([&](const std::string& name, auto& t, bool is_template) {
        out.push_back({name, t.data(), static_cast<std::size_t>(t.size()), t.rows(), t.cols(), is_template});
    });
    return out;
}

void ModelParams::add(const ModelParams& other) {
    auto mine = views();
    auto theirs = const_cast<ModelParams&>(other).views();
    if (mine.size() != theirs.size()) throw Error(ErrorKind::ShapeMismatch, "parameter sets differ");
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].size != theirs[i].size) throw Error(ErrorKind::ShapeMismatch, "tensor " + mine[i].name);
        for (std::size_t e = 0; e < mine[i].size; ++e) mine[i].data[e] += theirs[i].data[e];
    }
}

void ModelParams::assign(const ModelParams& other) {
    auto mine = views();
    auto theirs = const_cast<ModelParams&>(other).views();
    bool same = mine.size() == theirs.size();
    for (std::size_t i = 0; same && i < mine.size(); ++i) same = mine[i].size == theirs[i].size;
    if (!same) {
        *this = other;
        return;
    }
    for (std::size_t i = 0; i < mine.size(); ++i) std::copy_n(theirs[i].data, theirs[i].size, mine[i].data);
}

void ModelParams::set_zero() {
    for_each([](const std::string&, auto& t, bool) { t.setZero(); });
}

std::size_t ModelParams::parameter_count() const {
    std::size_t total = 0;
    for_each([&](const std::string&, const auto& t, bool) { total += static_cast<std::size_t>(t.size()); });
    return total;
}

// ---------------------------------------------------------------------------

double margin_loss(const Mat& class_capsules, int true_label) {
    double loss = 0.0;
    for (Eigen::Index j = 0; j < class_capsules.rows(); ++j) {
        const double len = class_capsules.row(j).norm();
        if (j == true_label)
            loss += std::pow(std::max(0.0, 0.9 - len), 2);
        else
            loss += 0.5 * std::pow(std::max(0.0, len - 0.1), 2);
    }
    return loss;
}

Mat margin_loss_grad(const Mat& class_capsules, int true_label) {
    Mat g = Mat::Zero(class_capsules.rows(), class_capsules.cols());
    for (Eigen::Index j = 0; j < class_capsules.rows(); ++j) {
        const double len = class_capsules.row(j).norm();
        if (len < 1e-12) continue;
        double dlen = 0.0;
        if (j == true_label)
            dlen = -2.0 * std::max(0.0, 0.9 - len);
        else
            dlen = std::max(0.0, len - 0.1);
        g.row(j) = dlen / len * class_capsules.row(j);
    }
    return g;
}

double reconstruction_loss(const Mat& adjacency, const Mat& reconstructed) {
    if (adjacency.rows() != reconstructed.rows() || adjacency.cols() != reconstructed.cols())
        throw Error(ErrorKind::ShapeMismatch, "reconstruction shape differs from the adjacency matrix");
    return (adjacency - reconstructed).norm();
}

Mat reconstruction_loss_grad(const Mat& adjacency, const Mat& reconstructed) {
    const double d = reconstruction_loss(adjacency, reconstructed);
    if (d < 1e-12) return Mat::Zero(adjacency.rows(), adjacency.cols());
    return (reconstructed - adjacency) / d;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
    return Model(config, ModelParams::init(config, seed));
}

ForwardPass Model::forward(const Mat& adjacency) const {
    if (adjacency.rows() != config_.n || adjacency.cols() != config_.n)
        throw Error(ErrorKind::ShapeMismatch, "model expects " + std::to_string(config_.n) + " nodes, graph has " +
                                                  std::to_string(adjacency.rows()));
    ForwardPass pass;
    pass.version = version_;
    pass.adjacency = adjacency;
    pass.iso = extract_features(adjacency, params_.bank, config_.mode);
    const Orientation orient =
        config_.ablation == Ablation::LengthOnly ? Orientation::Constant : Orientation::Transform;
    pass.primary = build_primary_capsules(pass.iso, config_.gamma, orient);
    pass.digit = dynamic_routing(pass.primary, params_.transform, config_.routing_iterations, kClasses);
    if (config_.ablation == Ablation::NoResidual) {
        pass.residual.capsules = Mat::Zero(kClasses, config_.digit_dim());
        pass.class_capsules = combine_heads(pass.digit.output(), pass.residual.capsules);
    } else {
        pass.residual = residual_capsules(pass.iso, params_.residual);
        pass.class_capsules = combine_heads(pass.digit.output(), pass.residual.capsules);
    }
    pass.reconstruction = reconstruct(pass.class_capsules, params_.decoder, config_.n);
    pass.prediction = classify(pass.class_capsules);
    return pass;
}

SampleLoss Model::loss(const ForwardPass& pass, int label) const {
    return {margin_loss(pass.class_capsules, label),
            reconstruction_loss(pass.adjacency, pass.reconstruction.adjacency)};
}

void Model::backward(const ForwardPass& pass, int label, double margin_weight, double recon_weight,
                     ModelParams& grads) const {
    if (pass.version != version_)
        throw Error(ErrorKind::StaleActivations, "parameters changed since the forward pass");

    Mat d_v = margin_weight * margin_loss_grad(pass.class_capsules, label);
    if (config_.ablation != Ablation::NoRecon && recon_weight != 0.0) {
        const Mat d_ahat = recon_weight * reconstruction_loss_grad(pass.adjacency, pass.reconstruction.adjacency);
        Eigen::Map<const Vec> flat(d_ahat.data(), d_ahat.size());
        const Vec d_in = params_.decoder.backward(pass.reconstruction.mlp, flat, grads.decoder);
        d_v += Eigen::Map<const Mat>(d_in.data(), d_v.rows(), d_v.cols());
    }

    const RoutingGradients rg = dynamic_routing_backward(pass.primary, params_.transform, pass.digit, d_v);
    grads.transform += rg.transform;
    std::vector<Mat> d_scores = primary_capsules_backward(pass.primary, rg.vectors);

    if (config_.ablation != Ablation::NoResidual) {
        const auto d_res =
            residual_capsules_backward(pass.residual, params_.residual, d_v, grads.residual, pass.iso.positions);
        for (std::size_t ch = 0; ch < d_scores.size(); ++ch) d_scores[ch] += d_res[ch];
    }

    const auto d_templates = grad_scores_wrt_templates(pass.adjacency, params_.bank, pass.iso, d_scores);
    for (std::size_t ch = 0; ch < d_templates.size(); ++ch) grads.bank.templates[ch] += d_templates[ch];
}

}  // namespace isocaps
