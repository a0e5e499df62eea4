#include "isocaps/mlp.hpp"

#include <cmath>

#include "isocaps/error.hpp"

namespace isocaps {

Mlp Mlp::create(const std::vector<int>& widths, OutputActivation act, std::mt19937_64& rng) {
    Mlp mlp;
    mlp.output_activation = act;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        const double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Dense d;
        d.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) d.weight(r, c) = u(rng);
        d.bias = Vec::Zero(out);
        mlp.layers.push_back(std::move(d));
    }
    return mlp;
}

MlpTrace Mlp::forward(const Vec& x) const {
    if (x.size() != in()) throw Error(ErrorKind::ShapeMismatch, "MLP input has wrong length");
    MlpTrace tr;
    Vec h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        tr.inputs.push_back(h);
        Vec z = layers[l].weight * h + layers[l].bias;
        tr.pre.push_back(z);
        if (l + 1 < layers.size())
            h = z.cwiseMax(0.0);
        else if (output_activation == OutputActivation::Tanh)
            h = z.array().tanh().matrix();
        else
            h = z;
    }
    tr.output = h;
    return tr;
}

Vec Mlp::backward(const MlpTrace& trace, const Vec& grad_output, Mlp& grads) const {
    Vec g = grad_output;
    for (std::size_t idx = layers.size(); idx-- > 0;) {
        const Vec& z = trace.pre[idx];
        if (idx + 1 == layers.size()) {
            if (output_activation == OutputActivation::Tanh)
                g = g.cwiseProduct((1.0 - trace.output.array().square()).matrix());
        } else {
            for (Eigen::Index i = 0; i < g.size(); ++i)
                if (z(i) <= 0.0) g(i) = 0.0;
        }
        grads.layers[idx].weight.noalias() += g * trace.inputs[idx].transpose();
        grads.layers[idx].bias += g;
        g = layers[idx].weight.transpose() * g;
    }
    return g;
}

Mlp Mlp::zeros_like() const {
    Mlp z;
    z.output_activation = output_activation;
    for (const auto& d : layers)
        z.layers.push_back({Mat::Zero(d.weight.rows(), d.weight.cols()), Vec::Zero(d.bias.size())});
    return z;
}

}  // namespace isocaps
