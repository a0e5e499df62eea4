#include "isocaps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "isocaps/error.hpp"
#include "parallel.hpp"

namespace isocaps {

namespace {

// Graphs per gradient-accumulation chunk. Chunks are summed in index order,
// so the result does not depend on the thread count.
constexpr std::size_t kChunk = 4;

double objective_delta(Ablation ablation, double delta) {
    return ablation == Ablation::NoRecon ? 0.0 : delta;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void tally(Metrics& m, int label, int predicted) {
    m.predictions.push_back(predicted);
    if (label == 1 && predicted == 1) ++m.true_positive;
    if (label == 0 && predicted == 1) ++m.false_positive;
    if (label == 1 && predicted == 0) ++m.false_negative;
    if (label == 0 && predicted == 0) ++m.true_negative;
}

}  // namespace

ModelConfig TrainConfig::model_config(int n) const {
    ModelConfig mc;
    mc.n = n;
    mc.k = k;
    mc.channels = channels;
    mc.capsule_dim = capsule_dim;
    mc.routing_iterations = routing_iterations;
    mc.gamma = gamma;
    mc.mode = mode;
    mc.ablation = ablation;
    return mc;
}

void TrainConfig::validate() const {
    if (!(delta >= 0.0)) throw Error(ErrorKind::BadConfig, "delta must be non-negative");
    if (epochs < 0) throw Error(ErrorKind::BadConfig, "epochs must be non-negative");
    if (batch_size < 1) throw Error(ErrorKind::BadConfig, "batch size must be positive");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::BadConfig, "learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw Error(ErrorKind::BadConfig, "weight decay must be non-negative");
    if (threads < 1) throw Error(ErrorKind::BadConfig, "threads must be positive");
    if (patience < 0) throw Error(ErrorKind::BadConfig, "patience must be non-negative");
}

void RoutingStats::observe(const DigitCapsules& digit) {
    for (const Mat& alpha : digit.coefficients) {
        min_alpha = std::min(min_alpha, alpha.minCoeff());
        max_alpha = std::max(max_alpha, alpha.maxCoeff());
        max_alpha_sum = std::max(max_alpha_sum, alpha.rowwise().sum().maxCoeff());
        ++iterations_checked;
    }
}

void RoutingStats::merge(const RoutingStats& other) {
    min_alpha = std::min(min_alpha, other.min_alpha);
    max_alpha = std::max(max_alpha, other.max_alpha);
    max_alpha_sum = std::max(max_alpha_sum, other.max_alpha_sum);
    iterations_checked += other.iterations_checked;
}

void finalize_metrics(Metrics& m) {
    const int total = m.true_positive + m.false_positive + m.false_negative + m.true_negative;
    m.accuracy = total > 0 ? static_cast<double>(m.true_positive + m.true_negative) / total : 0.0;
    const double precision =
        m.true_positive + m.false_positive > 0
            ? static_cast<double>(m.true_positive) / (m.true_positive + m.false_positive)
            : 0.0;
    const double recall = m.true_positive + m.false_negative > 0
                              ? static_cast<double>(m.true_positive) / (m.true_positive + m.false_negative)
                              : 0.0;
    m.f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

double total_loss(const Model& model, const Batch& batch, double delta, int threads) {
    if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "total loss of an empty batch");
    std::vector<SampleLoss> losses(batch.size());
    detail::parallel_for(batch.size(), threads, [&](std::size_t i) {
        losses[i] = model.loss(model.forward(batch[i]->adjacency), batch[i]->label);
    });
    const double d = objective_delta(model.config().ablation, delta);
    double margin = 0.0, recon = 0.0;
    for (const auto& l : losses) {
        margin += l.margin;
        recon += l.reconstruction;
    }
    return (margin + d * recon) / static_cast<double>(batch.size());
}

BatchResult backward(const Model& model, const Batch& batch, double delta, int threads, ModelParams& grads) {
    if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "backward over an empty batch");
    const double d = objective_delta(model.config().ablation, delta);
    const double scale = 1.0 / static_cast<double>(batch.size());
    const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;

    // Chunks run in waves of `workers`; each wave's accumulators are reused and
    // added to `grads` in chunk order, so the sum does not depend on `threads`.
    struct ChunkOut {
        ModelParams grads;
        RoutingStats routing;
        std::vector<SampleLoss> losses;
        std::vector<int> predictions;
    };
    const std::size_t workers = std::min<std::size_t>(chunks, static_cast<std::size_t>(std::max(1, threads)));
    std::vector<ChunkOut> wave(workers);
    for (auto& co : wave) co.grads = model.params().zeros_like();

    BatchResult result;
    std::size_t idx = 0;
    for (std::size_t first = 0; first < chunks; first += workers) {
        const std::size_t count = std::min(workers, chunks - first);
        detail::parallel_for(count, threads, [&](std::size_t w) {
            ChunkOut& co = wave[w];
            const std::size_t c = first + w;
            co.grads.set_zero();
            co.routing = RoutingStats{};
            co.losses.clear();
            co.predictions.clear();
            const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
            for (std::size_t i = c * kChunk; i < end; ++i) {
                const ForwardPass pass = model.forward(batch[i]->adjacency);
                co.routing.observe(pass.digit);
                co.losses.push_back(model.loss(pass, batch[i]->label));
                co.predictions.push_back(pass.prediction.label);
                model.backward(pass, batch[i]->label, scale, scale * d, co.grads);
            }
        });
        for (std::size_t w = 0; w < count; ++w) {
            const ChunkOut& co = wave[w];
            if (first + w == 0)
                grads.assign(co.grads);
            else
                grads.add(co.grads);
            result.routing.merge(co.routing);
            for (std::size_t i = 0; i < co.losses.size(); ++i, ++idx) {
                result.metrics.loss_margin += co.losses[i].margin;
                result.metrics.loss_recon += co.losses[i].reconstruction;
                tally(result.metrics, batch[idx]->label, co.predictions[i]);
            }
        }
    }
    result.metrics.loss_total = (result.metrics.loss_margin + d * result.metrics.loss_recon) * scale;
    result.metrics.loss_margin *= scale;
    result.metrics.loss_recon *= scale;
    finalize_metrics(result.metrics);
    return result;
}

AdamState AdamState::for_params(const ModelParams& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(Model& model, const ModelParams& grads, AdamState& state, const TrainConfig& config) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, state.step);
    const double c2 = 1.0 - std::pow(beta2, state.step);
    ModelParams& params = model.mutable_params();
    auto p = params.views();
    auto g = const_cast<ModelParams&>(grads).views();
    auto m = state.first.views();
    auto v = state.second.views();
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
        throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].size != g[t].size) throw Error(ErrorKind::ShapeMismatch, "gradient shape for " + p[t].name);
        for (std::size_t e = 0; e < p[t].size; ++e) {
            const double ge = g[t].data[e];
            m[t].data[e] = beta1 * m[t].data[e] + (1.0 - beta1) * ge;
            v[t].data[e] = beta2 * v[t].data[e] + (1.0 - beta2) * ge * ge;
            const double mhat = m[t].data[e] / c1;
            const double vhat = v[t].data[e] / c2;
            p[t].data[e] -= config.learning_rate * (mhat / (std::sqrt(vhat) + eps) + config.weight_decay * p[t].data[e]);
        }
    }
    params.bank.symmetrize();
}

Metrics evaluate(const Model& model, const Batch& graphs, double delta, int threads) {
    if (graphs.empty()) throw Error(ErrorKind::EmptyEvalSet, "no graphs to evaluate");
    std::vector<SampleLoss> losses(graphs.size());
    std::vector<int> predicted(graphs.size());
    detail::parallel_for(graphs.size(), threads, [&](std::size_t i) {
        const ForwardPass pass = model.forward(graphs[i]->adjacency);
        losses[i] = model.loss(pass, graphs[i]->label);
        predicted[i] = pass.prediction.label;
    });
    const double d = objective_delta(model.config().ablation, delta);
    Metrics m;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        m.loss_margin += losses[i].margin;
        m.loss_recon += losses[i].reconstruction;
        tally(m, graphs[i]->label, predicted[i]);
    }
    const double scale = 1.0 / static_cast<double>(graphs.size());
    m.loss_total = (m.loss_margin + d * m.loss_recon) * scale;
    m.loss_margin *= scale;
    m.loss_recon *= scale;
    finalize_metrics(m);
    return m;
}

Model train_single(const Batch& graphs, int n, const TrainConfig& config, std::uint64_t model_seed,
                   std::vector<EpochRecord>* records, RoutingStats* routing, const std::string& fold_label) {
    config.validate();
    Model model = Model::create(config.model_config(n), model_seed);
    if (graphs.empty()) return model;
    AdamState adam = AdamState::for_params(model.params());
    std::mt19937_64 rng(mix_seed(model_seed, 0x5348554646ULL));
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), 0);

    ModelParams grads = model.params().zeros_like();
    double best_loss = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
        Metrics epoch_metrics;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            Batch batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(graphs[order[i]]);
            const BatchResult br = backward(model, batch, config.delta, config.threads, grads);
            adam_step(model, grads, adam, config);
            if (routing) routing->merge(br.routing);
            const double w = static_cast<double>(batch.size());
            epoch_metrics.loss_margin += br.metrics.loss_margin * w;
            epoch_metrics.loss_recon += br.metrics.loss_recon * w;
            epoch_metrics.loss_total += br.metrics.loss_total * w;
            for (std::size_t i = 0; i < batch.size(); ++i) tally(epoch_metrics, batch[i]->label, br.metrics.predictions[i]);
        }
        const double scale = 1.0 / static_cast<double>(order.size());
        epoch_metrics.loss_margin *= scale;
        epoch_metrics.loss_recon *= scale;
        epoch_metrics.loss_total *= scale;
        finalize_metrics(epoch_metrics);
        if (records)
            records->push_back({fold_label, epoch, "train", epoch_metrics.loss_margin, epoch_metrics.loss_recon,
                                epoch_metrics.loss_total, epoch_metrics.accuracy, epoch_metrics.f1});
        if (config.patience > 0) {
            if (epoch_metrics.loss_total < best_loss) {
                best_loss = epoch_metrics.loss_total;
                stale_epochs = 0;
            } else if (++stale_epochs >= config.patience) {
                break;
            }
        }
    }
    return model;
}

std::uint64_t fold_model_seed(std::uint64_t seed, int fold) {
    return mix_seed(seed, static_cast<std::uint64_t>(fold));
}

TrainResult train(const GraphDataset& dataset, const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw Error(ErrorKind::EmptyEvalSet, "cannot train on an empty dataset");
    const SplitPlan plan = make_folds(dataset, config.seed);
    TrainResult result;
    std::vector<Metrics> evaluated;
    for (int fold = 0; fold < SplitPlan::kFolds; ++fold) {
        Batch train_set, test_set;
        for (std::size_t i : plan.complement(fold)) train_set.push_back(&dataset.graphs[i]);
        for (std::size_t i : plan.members(fold)) test_set.push_back(&dataset.graphs[i]);
        if (test_set.empty()) continue;
        const std::string label = std::to_string(fold);
        Model model = train_single(train_set, dataset.n, config, fold_model_seed(config.seed, fold),
                                   &result.records, &result.routing, label);
        Metrics m = evaluate(model, test_set, config.delta, config.threads);
        // The reported epoch of a test row is the number of epochs trained.
        int trained = 0;
        for (const auto& r : result.records)
            if (r.fold == label) trained = std::max(trained, r.epoch);
        result.records.push_back({label, trained, "test", m.loss_margin, m.loss_recon, m.loss_total, m.accuracy, m.f1});
        result.folds.push_back(m);
        result.model = std::move(model);
    }
    Metrics mean;
    for (const auto& m : result.folds) {
        mean.accuracy += m.accuracy;
        mean.f1 += m.f1;
        mean.loss_margin += m.loss_margin;
        mean.loss_recon += m.loss_recon;
        mean.loss_total += m.loss_total;
    }
    const double scale = 1.0 / static_cast<double>(result.folds.size());
    mean.accuracy *= scale;
    mean.f1 *= scale;
    mean.loss_margin *= scale;
    mean.loss_recon *= scale;
    mean.loss_total *= scale;
    result.mean = mean;
    result.records.push_back({"mean", config.epochs, "test", mean.loss_margin, mean.loss_recon, mean.loss_total,
                              mean.accuracy, mean.f1});
    return result;
}

void write_metrics_csv(const std::vector<EpochRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    out << "fold,epoch,split,loss_margin,loss_recon,loss_total,accuracy,f1\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%s,%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.fold.c_str(), r.epoch,
                      r.split.c_str(), r.loss_margin, r.loss_recon, r.loss_total, r.accuracy, r.f1);
        out << buf;
    }
    out.flush();
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------

GradientCheckReport gradient_check(const std::vector<ModelParams::TensorView>& params,
                                   const std::vector<ModelParams::TensorView>& analytic,
                                   const std::function<long double()>& loss, std::uint64_t seed,
                                   std::size_t max_coords, double step) {
    if (params.size() != analytic.size()) throw Error(ErrorKind::ShapeMismatch, "gradient views differ");
    std::mt19937_64 rng(seed);
    GradientCheckReport report;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& p = params[t];
        const auto& g = analytic[t];
        std::vector<std::size_t> coords(p.size);
        std::iota(coords.begin(), coords.end(), 0);
        if (p.is_template) {
            // Upper triangle only; each coordinate stands for the pair (a, b), (b, a).
            coords.erase(std::remove_if(coords.begin(), coords.end(),
                                        [&](std::size_t e) { return static_cast<Eigen::Index>(e) / p.cols >
                                                                    static_cast<Eigen::Index>(e) % p.cols; }),
                         coords.end());
        }
        const std::size_t take = std::min(max_coords, coords.size());
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
            std::swap(coords[i], coords[pick(rng)]);
        }
        coords.resize(take);
        std::sort(coords.begin(), coords.end());

        GradientCheckEntry entry;
        entry.name = p.name;
        for (std::size_t e : coords) {
            std::size_t mirror = e;
            if (p.is_template) {
                const auto r = static_cast<Eigen::Index>(e) / p.cols, c = static_cast<Eigen::Index>(e) % p.cols;
                mirror = static_cast<std::size_t>(c * p.cols + r);
            }
            const double orig = p.data[e];
            const double orig_m = p.data[mirror];
            auto set = [&](double h) {
                p.data[e] = orig + h;
                if (mirror != e) p.data[mirror] = orig_m + h;
            };
            set(step);
            const long double up = loss();
            set(-step);
            const long double down = loss();
            p.data[e] = orig;
            p.data[mirror] = orig_m;
            const double numeric = static_cast<double>((up - down) / (2.0L * step));
            const double exact = mirror != e ? g.data[e] + g.data[mirror] : g.data[e];
            const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
            if (rel > entry.max_rel_error || entry.checked == 0) {
                entry.max_rel_error = rel;
                entry.worst_analytic = exact;
                entry.worst_numeric = numeric;
            }
            entry.mean_rel_error += rel;
            ++entry.checked;
        }
        total += entry.mean_rel_error;
        count += entry.checked;
        if (entry.checked) entry.mean_rel_error /= static_cast<double>(entry.checked);
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    report.mean_rel_error = count ? total / static_cast<double>(count) : 0.0;
    return report;
}

GradientCheckReport gradient_check(Model& model, const BrainGraph& graph, double delta, std::uint64_t seed,
                                   std::size_t max_coords, double step) {
    const double d = objective_delta(model.config().ablation, delta);
    ModelParams grads = model.params().zeros_like();
    {
        const ForwardPass pass = model.forward(graph.adjacency);
        model.backward(pass, graph.label, 1.0, d, grads);
    }
    auto loss = [&]() {
        const SampleLoss l = model.loss(model.forward(graph.adjacency), graph.label);
        return static_cast<long double>(l.margin) + static_cast<long double>(d) * l.reconstruction;
    };
    return gradient_check(model.mutable_params().views(), grads.views(), loss, seed, max_coords, step);
}

}  // namespace isocaps
