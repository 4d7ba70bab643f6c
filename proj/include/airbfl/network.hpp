#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "airbfl/rng.hpp"

namespace airbfl {

/// Fully connected ReLU network with a linear output layer (softmax applied
/// by the loss/prediction code). Weights live in one flat vector; the layout
/// is fixed for the process lifetime: for each layer l in order, the weight
/// matrix W_l in row-major [out][in] order, then the bias vector b_l.
struct MlpArchitecture {
    std::vector<std::pair<int, int>> layer_shapes;  // (fan_in, fan_out) per layer

    int weight_count() const {
        int d = 0;
        for (auto [in, out] : layer_shapes) d += in * out + out;
        return d;
    }
    int input_dim() const { return layer_shapes.front().first; }
    int output_dim() const { return layer_shapes.back().second; }

    void validate() const {
        if (layer_shapes.empty())
            throw std::invalid_argument("MlpArchitecture: no layers");
        for (std::size_t l = 0; l + 1 < layer_shapes.size(); ++l)
            if (layer_shapes[l].second != layer_shapes[l + 1].first)
                throw std::invalid_argument("MlpArchitecture: fan mismatch between layers");
    }
};

inline void softmax_inplace(std::vector<double>& z) {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

inline std::vector<double> forward_logits(const MlpArchitecture& arch,
                                          std::span<const double> weights,
                                          std::span<const double> input) {
    std::vector<double> act(input.begin(), input.end());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < arch.layer_shapes.size(); ++l) {
        const auto [fan_in, fan_out] = arch.layer_shapes[l];
        std::vector<double> next(fan_out);
        for (int o = 0; o < fan_out; ++o) {
            double z = weights[offset + static_cast<std::size_t>(fan_in) * fan_out + o];  // bias
            const double* row = &weights[offset + static_cast<std::size_t>(o) * fan_in];
            for (int i = 0; i < fan_in; ++i) z += row[i] * act[i];
            next[o] = z;
        }
        offset += static_cast<std::size_t>(fan_in) * fan_out + fan_out;
        if (l + 1 < arch.layer_shapes.size())
            for (auto& v : next) v = v > 0.0 ? v : 0.0;
        act = std::move(next);
    }
    return act;
}

inline std::vector<double> forward_probs(const MlpArchitecture& arch,
                                         std::span<const double> weights,
                                         std::span<const double> input) {
    auto z = forward_logits(arch, weights, input);
    softmax_inplace(z);
    return z;
}

/// One backprop pass: returns the sample's negative log-likelihood under the
/// softmax-categorical model and accumulates scale * d(nll)/d(weights) into
/// grad (grad must have weight_count entries and is not cleared here).
inline double nll_and_grad(const MlpArchitecture& arch, std::span<const double> weights,
                           std::span<const double> input, int label,
                           std::span<double> grad, double scale) {
    const std::size_t layers = arch.layer_shapes.size();
    // Forward, keeping activations per layer.
    std::vector<std::vector<double>> acts(layers + 1);
    acts[0].assign(input.begin(), input.end());
    std::size_t offset = 0;
    std::vector<std::size_t> offsets(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        offsets[l] = offset;
        const auto [fan_in, fan_out] = arch.layer_shapes[l];
        acts[l + 1].resize(fan_out);
        for (int o = 0; o < fan_out; ++o) {
            double z = weights[offset + static_cast<std::size_t>(fan_in) * fan_out + o];
            const double* row = &weights[offset + static_cast<std::size_t>(o) * fan_in];
            for (int i = 0; i < fan_in; ++i) z += row[i] * acts[l][i];
            acts[l + 1][o] = (l + 1 < layers && z < 0.0) ? 0.0 : z;
        }
        offset += static_cast<std::size_t>(fan_in) * fan_out + fan_out;
    }

    // Loss from the logits.
    std::vector<double> probs = acts[layers];
    softmax_inplace(probs);
    const double nll = -std::log(probs[label]);
    if (grad.empty()) return nll;  // loss-only evaluation

    // Backward. delta holds d(nll)/d(z) of the current layer.
    std::vector<double> delta = probs;
    delta[label] -= 1.0;
    for (std::size_t l = layers; l-- > 0;) {
        const auto [fan_in, fan_out] = arch.layer_shapes[l];
        const std::size_t base = offsets[l];
        std::vector<double> prev_delta;
        if (l > 0) prev_delta.assign(fan_in, 0.0);
        for (int o = 0; o < fan_out; ++o) {
            const double dz = delta[o];
            double* grow = &grad[base + static_cast<std::size_t>(o) * fan_in];
            const double* wrow = &weights[base + static_cast<std::size_t>(o) * fan_in];
            for (int i = 0; i < fan_in; ++i) {
                grow[i] += scale * dz * acts[l][i];
                if (l > 0) prev_delta[i] += wrow[i] * dz;
            }
            grad[base + static_cast<std::size_t>(fan_in) * fan_out + o] += scale * dz;
        }
        if (l > 0) {
            // ReLU gate: activation zero means the unit was clamped.
            for (int i = 0; i < fan_in; ++i)
                if (acts[l][i] <= 0.0) prev_delta[i] = 0.0;
            delta = std::move(prev_delta);
        }
    }
    return nll;
}

/// He-normal initial means: per-layer std sqrt(2/fan_in), biases zero.
inline std::vector<double> he_normal_init(const MlpArchitecture& arch, Rng& rng) {
    std::vector<double> w(arch.weight_count());
    std::normal_distribution<double> dist(0.0, 1.0);
    std::size_t offset = 0;
    for (auto [fan_in, fan_out] : arch.layer_shapes) {
        const double sd = std::sqrt(2.0 / fan_in);
        for (int i = 0; i < fan_in * fan_out; ++i) w[offset + i] = sd * dist(rng);
        offset += static_cast<std::size_t>(fan_in) * fan_out;
        for (int i = 0; i < fan_out; ++i) w[offset + i] = 0.0;
        offset += fan_out;
    }
    return w;
}

}  // namespace airbfl
