#pragma once

#include <random>
#include <vector>

#include "isocaps/linalg.hpp"

namespace isocaps {

// y = weight * x + bias, weight is out x in.
struct Dense {
    Mat weight;
    Vec bias;

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }
};

enum class OutputActivation { Identity, Tanh };

// Activations recorded by Mlp::forward for the backward pass.
struct MlpTrace {
    std::vector<Vec> inputs;  // input of each layer
    std::vector<Vec> pre;     // pre-activation of each layer
    Vec output;
};

/// Fully connected stack with rectifier hidden layers.
struct Mlp {
    std::vector<Dense> layers;
    OutputActivation output_activation = OutputActivation::Identity;

    /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    static Mlp create(const std::vector<int>& widths, OutputActivation act, std::mt19937_64& rng);

    int in() const { return layers.front().in(); }
    int out() const { return layers.back().out(); }

    MlpTrace forward(const Vec& x) const;

    /// Accumulates parameter gradients into `grads` (same shapes) and returns dL/dx.
    Vec backward(const MlpTrace& trace, const Vec& grad_output, Mlp& grads) const;

    Mlp zeros_like() const;
};

}  // namespace isocaps
