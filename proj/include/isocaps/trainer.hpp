#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "isocaps/graph_data.hpp"
#include "isocaps/model.hpp"

namespace isocaps {

/// Optimization and protocol settings. Defaults follow the reference protocol:
/// Adam, lr 0.01, decay 5e-4, 100 epochs, mini-batches of 64, k = 4.
struct TrainConfig {
    double learning_rate = 0.01;
    double weight_decay = 5e-4;
    int epochs = 100;
    int batch_size = 64;
    int k = 4;
    int channels = 3;
    int capsule_dim = 0;  // 0: k^2
    double gamma = 0.1;
    double delta = 0.0005;
    int routing_iterations = 3;
    MatchMode mode = MatchMode::Bruteforce;
    Ablation ablation = Ablation::None;
    std::uint64_t seed = 1;
    int threads = 1;
    int patience = 0;  // early stop on training loss; 0 disables

    ModelConfig model_config(int n) const;
    void validate() const;
};

/// Tracks the routing-coefficient invariants over every forward pass seen.
struct RoutingStats {
    double min_alpha = 1.0;
    double max_alpha = 0.0;
    double max_alpha_sum = 0.0;
    std::size_t iterations_checked = 0;

    void observe(const DigitCapsules& digit);
    void merge(const RoutingStats& other);
    bool valid() const { return min_alpha > 0.0 && max_alpha < 1.0 && max_alpha_sum < 1.0; }
};

struct Metrics {
    double accuracy = 0.0;
    double f1 = 0.0;
    double loss_margin = 0.0;  // means over graphs
    double loss_recon = 0.0;
    double loss_total = 0.0;
    int true_positive = 0;
    int false_positive = 0;
    int false_negative = 0;
    int true_negative = 0;
    std::vector<int> predictions;
};

/// accuracy = correct / total; F1 of the positive class, 0 when precision + recall = 0.
void finalize_metrics(Metrics& m);

struct EpochRecord {
    std::string fold;  // fold index or "mean"
    int epoch = 0;
    std::string split;
    double loss_margin = 0.0;
    double loss_recon = 0.0;
    double loss_total = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

using Batch = std::vector<const BrainGraph*>;

/// (sum margin + delta * sum recon) / |batch|. Throws EmptyBatch.
double total_loss(const Model& model, const Batch& batch, double delta, int threads = 1);

struct BatchResult {
    Metrics metrics;  // predictions and mean losses for the batch
    RoutingStats routing;
};

/// Gradient of total_loss over the batch, written into `grads` (overwritten).
/// Per-graph work may run on several threads; the reduction order is fixed.
BatchResult backward(const Model& model, const Batch& batch, double delta, int threads, ModelParams& grads);

/// First and second moment estimates of every parameter.
struct AdamState {
    ModelParams first;
    ModelParams second;
    int step = 0;

    static AdamState for_params(const ModelParams& params);
};

/// Adam with bias correction (0.9, 0.999, 1e-8) and decoupled weight decay on
/// every tensor; templates are re-symmetrized afterwards.
void adam_step(Model& model, const ModelParams& grads, AdamState& state, const TrainConfig& config);

/// Forward-only evaluation. Throws EmptyEvalSet.
Metrics evaluate(const Model& model, const Batch& graphs, double delta, int threads = 1);

struct TrainResult {
    Model model;                       // parameters of the last fold trained
    std::vector<EpochRecord> records;  // per-epoch training rows, per-fold test rows, mean row
    std::vector<Metrics> folds;
    Metrics mean;
    RoutingStats routing;
};

/// Seed of the initial parameters of the model trained with `fold` held out.
std::uint64_t fold_model_seed(std::uint64_t seed, int fold);

/// 3-fold cross-validation: train on two folds, evaluate on the third.
TrainResult train(const GraphDataset& dataset, const TrainConfig& config);

/// Trains one model on `graphs` without cross-validation.
Model train_single(const Batch& graphs, int n, const TrainConfig& config, std::uint64_t model_seed,
                   std::vector<EpochRecord>* records = nullptr, RoutingStats* routing = nullptr,
                   const std::string& fold_label = "0");

void write_metrics_csv(const std::vector<EpochRecord>& records, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradientCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    double worst_analytic = 0.0;  // the pair that produced max_rel_error
    double worst_numeric = 0.0;
};

struct GradientCheckReport {
    std::vector<GradientCheckEntry> entries;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
};

/// Checks analytic gradients against central differences for up to
/// `max_coords` coordinates per tensor. Tensors flagged symmetric are perturbed
/// along E_ab + E_ba so they stay symmetric.
/// `loss` evaluates the objective from the current contents of `params`; it
/// returns long double so weighted loss terms can be summed without the
/// rounding of the larger term swamping differences in the smaller one.
GradientCheckReport gradient_check(const std::vector<ModelParams::TensorView>& params,
                                   const std::vector<ModelParams::TensorView>& analytic,
                                   const std::function<long double()>& loss, std::uint64_t seed,
                                   std::size_t max_coords = 200, double step = 1e-5);

/// Full-model check on one graph with objective margin + delta * recon.
GradientCheckReport gradient_check(Model& model, const BrainGraph& graph, double delta, std::uint64_t seed,
                                   std::size_t max_coords = 200, double step = 1e-5);

}  // namespace isocaps
