#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "airbfl/data.hpp"
#include "airbfl/gaussian.hpp"
#include "airbfl/network.hpp"
#include "airbfl/rng.hpp"

namespace airbfl {

/// Raised when a local step produces a nonfinite loss; the orchestrator
/// excludes the device from the round and renormalizes the weights.
struct TrainingFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Phase { RhoPhase, NuPhase };

// Precision clamp bounds applied after every gradient step and after every
// global precision update.
inline constexpr double kPrecisionMin = 1e-6;
inline constexpr double kPrecisionMax = 1e8;

/// Per-device trainable state for one protocol phase. In the precision phase
/// the trainable vector is the local precision rho and the mean is frozen at
/// the global mean. In the mean phase the trainable vector is nu, a scaled
/// image of the local mean: nu = mean_scale * m with
/// mean_scale = rho_local / rho_next, so the sampling mean is
/// m = nu / mean_scale and the sampling covariance is the frozen global one.
struct PhaseState {
    Phase phase = Phase::RhoPhase;
    std::vector<double> trainable;
    std::vector<double> frozen_mean;       // rho phase only
    std::vector<double> frozen_precision;  // nu phase only
    std::vector<double> mean_scale;        // nu phase only

    static PhaseState rho_phase(const DiagonalGaussian& global) {
        global.validate();
        PhaseState s;
        s.phase = Phase::RhoPhase;
        s.trainable = global.precision;
        s.frozen_mean = global.mean;
        return s;
    }

    static PhaseState nu_phase(const std::vector<double>& global_mean,
                               const std::vector<double>& rho_local,
                               const std::vector<double>& rho_next) {
        const std::size_t d = global_mean.size();
        if (rho_local.size() != d || rho_next.size() != d)
            throw std::invalid_argument("PhaseState::nu_phase: dimension mismatch");
        PhaseState s;
        s.phase = Phase::NuPhase;
        s.frozen_precision = rho_next;
        s.mean_scale.resize(d);
        s.trainable.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            if (!(rho_local[i] > 0.0) || !(rho_next[i] > 0.0))
                throw std::invalid_argument("PhaseState::nu_phase: nonpositive precision");
            s.mean_scale[i] = rho_local[i] / rho_next[i];
            s.trainable[i] = s.mean_scale[i] * global_mean[i];
        }
        return s;
    }

    std::size_t dim() const { return trainable.size(); }

    /// Mean of the sampling distribution implied by the current trainables.
    std::vector<double> sampling_mean() const {
        if (phase == Phase::RhoPhase) return frozen_mean;
        std::vector<double> m(trainable.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = trainable[i] / mean_scale[i];
        return m;
    }
};

struct McLossReport {
    double task_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
    int mc_samples_used = 0;
};

struct BayesianClassifier {
    MlpArchitecture arch;
    DiagonalGaussian posterior;

    int weight_count() const { return arch.weight_count(); }

    /// He-normal means, constant initial standard deviation.
    static BayesianClassifier init(const MlpArchitecture& arch, double init_sigma, Rng& rng) {
        arch.validate();
        BayesianClassifier model;
        model.arch = arch;
        model.posterior.mean = he_normal_init(arch, rng);
        model.posterior.precision.assign(arch.weight_count(), 1.0 / (init_sigma * init_sigma));
        return model;
    }
};

/// w_i = rho_i^{-1/2} eps_i + mu_i with the frozen global mean.
inline std::vector<double> sample_weights_phase1(const PhaseState& state,
                                                 std::span<const double> eps) {
    if (state.phase != Phase::RhoPhase)
        throw std::invalid_argument("sample_weights_phase1: wrong phase");
    if (eps.size() != state.dim())
        throw std::invalid_argument("sample_weights_phase1: noise dimension mismatch");
    std::vector<double> w(state.dim());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(state.trainable[i] > 0.0))
            throw std::invalid_argument("sample_weights_phase1: nonpositive precision");
        w[i] = eps[i] / std::sqrt(state.trainable[i]) + state.frozen_mean[i];
    }
    return w;
}

/// w_i = rho_next_i^{-1/2} eps_i + m_i with the frozen global covariance.
inline std::vector<double> sample_weights_phase2(const PhaseState& state,
                                                 std::span<const double> eps) {
    if (state.phase != Phase::NuPhase)
        throw std::invalid_argument("sample_weights_phase2: wrong phase");
    if (eps.size() != state.dim())
        throw std::invalid_argument("sample_weights_phase2: noise dimension mismatch");
    std::vector<double> w(state.dim());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(state.frozen_precision[i] > 0.0))
            throw std::invalid_argument("sample_weights_phase2: nonpositive precision");
        const double m = state.trainable[i] / state.mean_scale[i];
        w[i] = eps[i] / std::sqrt(state.frozen_precision[i]) + m;
    }
    return w;
}

namespace detail {

struct CostGrad {
    McLossReport report;
    std::vector<double> grad;  // w.r.t. the phase's trainable vector
};

/// Shared evaluation of the local cost and (optionally) its gradient. The MC
/// noise is a pure function of rng_seed, so for a fixed seed the cost is a
/// deterministic function of the trainables; loss and gradient always use
/// the same samples (pathwise estimator).
inline CostGrad local_cost_and_grad(const MlpArchitecture& arch, const PhaseState& state,
                                    const DiagonalGaussian& prior, const LabeledDataset& data,
                                    std::span<const int> batch, double lambda, int mc_samples,
                                    std::uint64_t rng_seed, bool want_grad) {
    if (mc_samples < 1) throw std::invalid_argument("local_cost: mc_samples must be >= 1");
    const std::size_t d = state.dim();
    if (prior.dim() != d) throw std::invalid_argument("local_cost: prior dimension mismatch");
    if (static_cast<std::size_t>(arch.weight_count()) != d)
        throw std::invalid_argument("local_cost: architecture dimension mismatch");

    CostGrad out;
    if (want_grad) out.grad.assign(d, 0.0);
    std::vector<double> grad_w(want_grad ? d : 0);

    Rng noise_rng = make_stream(rng_seed, 0xe5c0u);
    const double inv_m = 1.0 / mc_samples;
    const double inv_batch = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());

    for (int m = 0; m < mc_samples; ++m) {
        const std::vector<double> eps = standard_normal(noise_rng, d);
        const std::vector<double> w = state.phase == Phase::RhoPhase
                                          ? sample_weights_phase1(state, eps)
                                          : sample_weights_phase2(state, eps);
        if (batch.empty()) continue;
        if (want_grad) std::fill(grad_w.begin(), grad_w.end(), 0.0);
        double nll_sum = 0.0;
        for (int idx : batch)
            nll_sum += nll_and_grad(arch, w, data.row(idx), data.labels[idx],
                                    want_grad ? std::span<double>(grad_w) : std::span<double>(),
                                    want_grad ? inv_batch : 0.0);
        out.report.task_loss += inv_m * inv_batch * nll_sum;
        if (want_grad) {
            if (state.phase == Phase::RhoPhase) {
                for (std::size_t i = 0; i < d; ++i) {
                    const double rho = state.trainable[i];
                    out.grad[i] += inv_m * grad_w[i] * (-0.5 * eps[i] / (rho * std::sqrt(rho)));
                }
            } else {
                for (std::size_t i = 0; i < d; ++i)
                    out.grad[i] += inv_m * grad_w[i] / state.mean_scale[i];
            }
        }
    }

    // Closed-form KL regularizer against the phase prior.
    if (state.phase == Phase::RhoPhase) {
        DiagonalGaussian current{state.frozen_mean, state.trainable};
        out.report.reg_loss = kl_divergence(current, prior);
        if (want_grad)
            for (std::size_t i = 0; i < d; ++i) {
                // d/d rho of 1/2 (log(rho/rho_t) + rho_t/rho), written so the
                // gradient is exactly zero at rho == rho_t.
                const double rho = state.trainable[i];
                out.grad[i] += lambda * 0.5 * (rho - prior.precision[i]) / (rho * rho);
            }
    } else {
        DiagonalGaussian current{state.sampling_mean(), state.frozen_precision};
        out.report.reg_loss = kl_divergence(current, prior);
        if (want_grad)
            for (std::size_t i = 0; i < d; ++i) {
                const double m = state.trainable[i] / state.mean_scale[i];
                out.grad[i] +=
                    lambda * prior.precision[i] * (m - prior.mean[i]) / state.mean_scale[i];
            }
    }

    out.report.total = out.report.task_loss + lambda * out.report.reg_loss;
    out.report.mc_samples_used = mc_samples;
    if (!std::isfinite(out.report.total))
        throw TrainingFault("nonfinite local cost");
    if (want_grad)
        for (double g : out.grad)
            if (!std::isfinite(g)) throw TrainingFault("nonfinite local gradient");
    return out;
}

}  // namespace detail

inline McLossReport local_cost(const BayesianClassifier& model, const PhaseState& state,
                               const DiagonalGaussian& prior, const LabeledDataset& data,
                               std::span<const int> batch, double lambda, int mc_samples,
                               std::uint64_t rng_seed) {
    return detail::local_cost_and_grad(model.arch, state, prior, data, batch, lambda, mc_samples,
                                       rng_seed, false)
        .report;
}

inline std::vector<double> grad_local_cost(const BayesianClassifier& model,
                                           const PhaseState& state, const DiagonalGaussian& prior,
                                           const LabeledDataset& data, std::span<const int> batch,
                                           double lambda, int mc_samples, std::uint64_t rng_seed) {
    return detail::local_cost_and_grad(model.arch, state, prior, data, batch, lambda, mc_samples,
                                       rng_seed, true)
        .grad;
}

struct LocalTrainParams {
    double learning_rate = 0.1;
    double kl_weight = 1.0 / 50000.0;
    int epochs = 3;
    int batch_size = 10;
    int mc_samples = 5;
};

/// Mini-batch SGD on the local cost: `epochs` passes over the device shard,
/// shuffled per epoch, precision positivity enforced by clamping in the rho
/// phase. The rng drives the shuffles and the per-step MC seeds.
inline PhaseState local_train(const BayesianClassifier& model, PhaseState state,
                              const DiagonalGaussian& prior, const LabeledDataset& shard,
                              const LocalTrainParams& params, Rng& rng) {
    if (shard.n == 0) throw std::invalid_argument("local_train: empty shard");
    std::vector<int> order(shard.n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < shard.n; start += params.batch_size) {
            const int len = std::min(params.batch_size, shard.n - start);
            const std::uint64_t step_seed = rng();
            const auto grad = detail::local_cost_and_grad(
                                  model.arch, state, prior, shard,
                                  std::span<const int>(order.data() + start, len),
                                  params.kl_weight, params.mc_samples, step_seed, true)
                                  .grad;
            for (std::size_t i = 0; i < state.trainable.size(); ++i)
                state.trainable[i] -= params.learning_rate * grad[i];
            if (state.phase == Phase::RhoPhase)
                for (auto& rho : state.trainable)
                    rho = std::clamp(rho, kPrecisionMin, kPrecisionMax);
        }
    }
    return state;
}

/// MC-averaged posterior predictive: mean softmax over M weight samples.
inline std::vector<double> predict_mc(const BayesianClassifier& model,
                                      std::span<const double> input, int mc_samples, Rng& rng) {
    if (mc_samples < 1) throw std::invalid_argument("predict_mc: mc_samples must be >= 1");
    const std::size_t d = model.posterior.dim();
    std::vector<double> probs(model.arch.output_dim(), 0.0);
    std::vector<double> w(d);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int m = 0; m < mc_samples; ++m) {
        for (std::size_t i = 0; i < d; ++i)
            w[i] = model.posterior.mean[i] +
                   dist(rng) / std::sqrt(model.posterior.precision[i]);
        const auto p = forward_probs(model.arch, w, input);
        for (std::size_t c = 0; c < probs.size(); ++c) probs[c] += p[c];
    }
    for (auto& p : probs) p /= mc_samples;
    return probs;
}

}  // namespace airbfl
