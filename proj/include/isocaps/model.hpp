#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "isocaps/capsule.hpp"
#include "isocaps/iso_layer.hpp"
#include "isocaps/mlp.hpp"

namespace isocaps {

enum class Ablation { None, LengthOnly, NoResidual, NoRecon };

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

inline constexpr int kClasses = 2;
inline constexpr int kResidualHidden = 64;
inline constexpr int kDecoderHidden1 = 128;
inline constexpr int kDecoderHidden2 = 256;

/// Architecture of one model instance.
struct ModelConfig {
    int n = 0;
    int k = 4;
    int channels = 3;
    int capsule_dim = 0;  // d_c; 0 means k^2
    int routing_iterations = 3;
    double gamma = 0.1;
    MatchMode mode = MatchMode::Bruteforce;
    Ablation ablation = Ablation::None;

    int primary_dim() const { return k * k; }
    int digit_dim() const { return capsule_dim > 0 ? capsule_dim : k * k; }
    int positions() const { return n - k + 1; }

    /// Throws GraphTooSmall, KTooLarge, BadGamma, BadIterations or BadConfig.
    void validate() const;
};

/// Every trainable tensor. Gradients and optimizer moments use the same type.
struct ModelParams {
    TemplateBank bank;
    Mat transform;                 // routing W, d_m x d_c
    std::vector<Mlp> residual;     // one MLP per class
    Mlp decoder;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    ModelParams zeros_like() const;

    /// Calls f(name, tensor, is_template) for every tensor in a fixed order.
    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    struct TensorView {
        std::string name;
        double* data;
        std::size_t size;
        Eigen::Index rows;
        Eigen::Index cols;
        bool is_template;
    };
    /// Flat views of every tensor, in for_each order.
    std::vector<TensorView> views();

    void add(const ModelParams& other);
    /// Copies values from a parameter set of the same shapes, reusing storage.
    void assign(const ModelParams& other);
    void set_zero();
    std::size_t parameter_count() const;

private:
    template <class Self, class F>
    static void visit(Self& self, F& f) {
        for (std::size_t i = 0; i < self.bank.templates.size(); ++i)
            f("template" + std::to_string(i), self.bank.templates[i], true);
        f(std::string("route.W"), self.transform, false);
        for (std::size_t j = 0; j < self.residual.size(); ++j)
            for (std::size_t l = 0; l < self.residual[j].layers.size(); ++l) {
                const std::string base = "residual" + std::to_string(j) + ".layer" + std::to_string(l);
                f(base + ".weight", self.residual[j].layers[l].weight, false);
                f(base + ".bias", self.residual[j].layers[l].bias, false);
            }
        for (std::size_t l = 0; l < self.decoder.layers.size(); ++l) {
            const std::string base = "decoder.layer" + std::to_string(l);
            f(base + ".weight", self.decoder.layers[l].weight, false);
            f(base + ".bias", self.decoder.layers[l].bias, false);
        }
    }
};

/// Everything the backward pass needs for one graph.
struct ForwardPass {
    std::uint64_t version = 0;
    Mat adjacency;
    IsoFeatures iso;
    PrimaryCapsules primary;
    DigitCapsules digit;
    ResidualTrace residual;
    Mat class_capsules;  // v_j rows
    ReconstructionTrace reconstruction;
    Classification prediction;
};

struct SampleLoss {
    double margin = 0.0;
    double reconstruction = 0.0;
};

/// Margin loss: sum_j t_j max(0, 0.9 - |v_j|)^2 + 0.5 (1 - t_j) max(0, |v_j| - 0.1)^2.
double margin_loss(const Mat& class_capsules, int true_label);
Mat margin_loss_grad(const Mat& class_capsules, int true_label);

/// ||A - A_hat||_F (not squared).
double reconstruction_loss(const Mat& adjacency, const Mat& reconstructed);
Mat reconstruction_loss_grad(const Mat& adjacency, const Mat& reconstructed);

class Model {
public:
    Model() = default;
    Model(ModelConfig config, ModelParams params);

    static Model create(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const ModelParams& params() const { return params_; }

    /// Mutable access bumps the version so that stale forward passes are rejected.
    ModelParams& mutable_params() {
        ++version_;
        return params_;
    }
    std::uint64_t version() const { return version_; }

    ForwardPass forward(const Mat& adjacency) const;

    SampleLoss loss(const ForwardPass& pass, int label) const;

    /// Accumulates d(margin_weight * margin + recon_weight * recon)/d(params) into grads.
    /// Throws StaleActivations if parameters changed since `pass` was computed.
    void backward(const ForwardPass& pass, int label, double margin_weight, double recon_weight,
                  ModelParams& grads) const;

private:
    ModelConfig config_;
    ModelParams params_;
    std::uint64_t version_ = 1;
};

}  // namespace isocaps
