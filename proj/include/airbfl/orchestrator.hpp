#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "airbfl/aircomp.hpp"
#include "airbfl/bayes.hpp"
#include "airbfl/channel.hpp"
#include "airbfl/config.hpp"
#include "airbfl/data.hpp"
#include "airbfl/gaussian.hpp"
#include "airbfl/metrics.hpp"
#include "airbfl/round_log.hpp"

namespace airbfl {

enum class Method { BayesAircomp, FedavgAircomp, FedproxAircomp, BayesIdeal };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::BayesAircomp: return "bayes-aircomp";
        case Method::FedavgAircomp: return "fedavg-aircomp";
        case Method::FedproxAircomp: return "fedprox-aircomp";
        case Method::BayesIdeal: return "bayes-ideal";
    }
    return "?";
}

namespace seed_tag {
inline constexpr std::uint64_t kTopology = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kChannel = 4;
inline constexpr std::uint64_t kNoise = 5;
inline constexpr std::uint64_t kDevice = 6;
inline constexpr std::uint64_t kEval = 7;
inline constexpr std::uint64_t kSynth = 8;
inline constexpr std::uint64_t kLogLoss = 9;
}  // namespace seed_tag

/// Millisecond wall clock; injectable so tests can pin timing fields.
using WallClock = std::function<double()>;

inline WallClock steady_wall_clock() {
    return [] {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
}

struct RoundSetup {
    const FLConfig* cfg = nullptr;
    const MlpArchitecture* arch = nullptr;
    const std::vector<LabeledDataset>* shards = nullptr;
    const std::vector<double>* pis = nullptr;
    const ChannelRealization* channel = nullptr;  // may be null when bypassing
    bool bypass_channel = false;
};

struct PowerAudit {
    long long symbols = 0;
    long long violations = 0;
};

namespace detail {

struct PhaseAggregation {
    std::vector<double> delta_hat;
    double delta_bar = 0.0;
    double xi_norm_sq = 0.0;
    double noise_scale = 0.0;
};

/// Shared uplink for one phase: weighted update power, per-device channel
/// inversion and power-optimized symbols, superposition per symbol slot,
/// and de-biased recovery. Inactive devices stay silent (zero symbols).
/// With the channel bypassed the weighted sum is delivered directly.
inline PhaseAggregation aggregate_phase(const std::vector<std::vector<double>>& deltas,
                                        const std::vector<double>& pis_active,
                                        const std::vector<int>& device_ids,
                                        const RoundSetup& setup, Rng& noise_rng,
                                        PowerAudit* audit) {
    const FLConfig& cfg = *setup.cfg;
    const int d = setup.arch->weight_count();
    PhaseAggregation agg;
    agg.delta_hat.assign(d, 0.0);
    if (deltas.empty()) return agg;

    agg.delta_bar = average_update_power(deltas, pis_active, d);
    agg.noise_scale = agg.delta_bar * cfg.noise_power / cfg.power_scaling;
    if (agg.delta_bar == 0.0) return agg;  // nothing to transmit

    if (setup.bypass_channel) {
        for (std::size_t k = 0; k < deltas.size(); ++k)
            for (int i = 0; i < d; ++i) agg.delta_hat[i] += pis_active[k] * deltas[k][i];
        return agg;
    }

    const ChannelRealization& channel = *setup.channel;
    const UpdatePlan plan{d, cfg.subchannels};
    std::vector<DeviceRoundEncoding> encodings(deltas.size());
    for (std::size_t k = 0; k < deltas.size(); ++k)
        encodings[k] =
            device_encode_round(deltas[k], agg.delta_bar, cfg.power_scaling, pis_active[k],
                                channel.gains[device_ids[k]], cfg.symbol_power, plan);

    if (audit != nullptr)
        for (const auto& enc : encodings)
            for (const auto& x : enc.symbols) {
                double e = 0.0;
                for (const auto& xf : x) e += std::norm(xf);
                audit->symbols += 1;
                // Relative slack absorbs double rounding in |x|^2.
                if (e > cfg.symbol_power * (1.0 + 1e-12)) audit->violations += 1;
            }

    const std::vector<Cx> silence(cfg.subchannels, Cx(0.0, 0.0));
    std::vector<ReceivedSymbol> received(plan.group_count());
    std::vector<std::vector<Cx>> slot(channel.devices(), silence);
    for (int n = 0; n < plan.group_count(); ++n) {
        for (auto& s : slot) s = silence;
        for (std::size_t k = 0; k < encodings.size(); ++k)
            slot[device_ids[k]] = encodings[k].symbols[n];
        received[n] = superpose(slot, channel, noise_rng);
    }

    auto est = recover_aggregate(received, agg.delta_bar, cfg.power_scaling, cfg.noise_power, plan);
    agg.delta_hat = std::move(est.delta_hat);

    std::vector<const DeviceRoundEncoding*> enc_ptrs;
    enc_ptrs.reserve(encodings.size());
    for (const auto& enc : encodings) enc_ptrs.push_back(&enc);
    agg.xi_norm_sq = norm_sq(aggregate_distortion(enc_ptrs, pis_active, cfg.learning_rate, plan));
    return agg;
}

inline std::vector<double> renormalize(const std::vector<double>& pis,
                                       const std::vector<int>& active) {
    double total = 0.0;
    for (int k : active) total += pis[k];
    std::vector<double> out;
    out.reserve(active.size());
    for (int k : active) out.push_back(pis[k] / total);
    return out;
}

inline std::vector<int> all_indices(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace detail

struct BayesRoundResult {
    DiagonalGaussian posterior;
    RoundLog log;
};

/// One two-phase round: every device retrains its precision vector against
/// the frozen global mean and the updates aggregate over the air into the
/// next global covariance; then every device retrains its (scaled) mean
/// against the frozen new covariance and the updates aggregate into the next
/// global mean. Devices whose training produces a nonfinite loss are
/// excluded from the failing phase with the weights renormalized.
inline BayesRoundResult run_round(const DiagonalGaussian& global, const RoundSetup& setup,
                                  int round_index, std::uint64_t master_seed,
                                  PowerAudit* audit = nullptr) {
    const FLConfig& cfg = *setup.cfg;
    const auto& shards = *setup.shards;
    const auto& pis = *setup.pis;
    const int n_devices = static_cast<int>(shards.size());
    const int d = setup.arch->weight_count();
    if (static_cast<int>(global.dim()) != d)
        throw std::invalid_argument("run_round: posterior/architecture dimension mismatch");

    const BayesianClassifier model{*setup.arch, global};
    const LocalTrainParams params{cfg.learning_rate, cfg.kl_weight, cfg.local_epochs,
                                  cfg.batch_size, cfg.mc_samples};
    Rng noise_rng = make_stream(master_seed, seed_tag::kNoise, round_index);

    BayesRoundResult result;
    result.log.round = round_index;

    // Phase 1: precision updates toward the next global covariance.
    std::vector<std::vector<double>> rho_local(n_devices);
    std::vector<int> active1;
    std::vector<std::vector<double>> delta_rho;
    std::vector<double> loss1;
    for (int k = 0; k < n_devices; ++k) {
        Rng dev_rng = make_stream(master_seed, seed_tag::kDevice, round_index, k, 1);
        PhaseState state = PhaseState::rho_phase(global);
        try {
            state = local_train(model, std::move(state), global, shards[k], params, dev_rng);
            const auto idx = detail::all_indices(shards[k].n);
            const auto report =
                local_cost(model, state, global, shards[k], idx, cfg.kl_weight, cfg.mc_samples,
                           mix_seed(master_seed, seed_tag::kLogLoss, round_index, k, 1));
            loss1.push_back(report.total);
        } catch (const TrainingFault&) {
            result.log.excluded_devices += 1;
            continue;
        }
        rho_local[k] = state.trainable;
        std::vector<double> delta(d);
        for (int i = 0; i < d; ++i) delta[i] = state.trainable[i] - global.precision[i];
        delta_rho.push_back(std::move(delta));
        active1.push_back(k);
    }

    const auto pis1 = detail::renormalize(pis, active1);
    const auto agg1 =
        detail::aggregate_phase(delta_rho, pis1, active1, setup, noise_rng, audit);
    result.log.xi_rho_norm_sq = agg1.xi_norm_sq;
    result.log.noise_scale_rho = agg1.noise_scale;
    result.log.delta_rho_norm = std::sqrt(norm_sq(agg1.delta_hat));
    for (std::size_t k = 0; k < loss1.size(); ++k)
        result.log.phase1_loss += pis1[k] * loss1[k];

    std::vector<double> rho_next(d);
    for (int i = 0; i < d; ++i) {
        const double raw = global.precision[i] + agg1.delta_hat[i];
        rho_next[i] = std::clamp(raw, kPrecisionMin, kPrecisionMax);
        if (rho_next[i] != raw) result.log.precision_clamp_count += 1;
    }

    // Phase 2: mean updates against the frozen new covariance. A device that
    // failed phase 1 has no local covariance and sits the round out.
    const DiagonalGaussian prior2{global.mean, rho_next};
    std::vector<int> active2;
    std::vector<std::vector<double>> delta_nu;
    std::vector<double> loss2;
    for (int k : active1) {
        Rng dev_rng = make_stream(master_seed, seed_tag::kDevice, round_index, k, 2);
        PhaseState state = PhaseState::nu_phase(global.mean, rho_local[k], rho_next);
        try {
            state = local_train(model, std::move(state), prior2, shards[k], params, dev_rng);
            const auto idx = detail::all_indices(shards[k].n);
            const auto report =
                local_cost(model, state, prior2, shards[k], idx, cfg.kl_weight, cfg.mc_samples,
                           mix_seed(master_seed, seed_tag::kLogLoss, round_index, k, 2));
            loss2.push_back(report.total);
        } catch (const TrainingFault&) {
            result.log.excluded_devices += 1;
            continue;
        }
        std::vector<double> delta(d);
        for (int i = 0; i < d; ++i) delta[i] = state.trainable[i] - global.mean[i];
        delta_nu.push_back(std::move(delta));
        active2.push_back(k);
    }

    const auto pis2 = detail::renormalize(pis, active2);
    const auto agg2 =
        detail::aggregate_phase(delta_nu, pis2, active2, setup, noise_rng, audit);
    result.log.xi_nu_norm_sq = agg2.xi_norm_sq;
    result.log.noise_scale_nu = agg2.noise_scale;
    result.log.delta_nu_norm = std::sqrt(norm_sq(agg2.delta_hat));
    for (std::size_t k = 0; k < loss2.size(); ++k)
        result.log.phase2_loss += pis2[k] * loss2[k];

    result.posterior.precision = std::move(rho_next);
    result.posterior.mean.resize(d);
    for (int i = 0; i < d; ++i)
        result.posterior.mean[i] = global.mean[i] + agg2.delta_hat[i];
    result.log.posterior_digest = posterior_digest(result.posterior);
    return result;
}

struct BaselineRoundResult {
    std::vector<double> weights;
    RoundLog log;
};

namespace detail {

/// Frequentist local SGD: cross-entropy over mini-batches, optionally with a
/// proximal pull toward the round-start global weights.
inline std::vector<double> deterministic_local_train(const MlpArchitecture& arch,
                                                     const std::vector<double>& global_weights,
                                                     const LabeledDataset& shard, double eta,
                                                     int epochs, int batch_size, double prox_mu,
                                                     Rng& rng) {
    const int d = arch.weight_count();
    std::vector<double> w = global_weights;
    std::vector<double> grad(d);
    std::vector<int> order = all_indices(shard.n);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < shard.n; start += batch_size) {
            const int len = std::min(batch_size, shard.n - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            for (int j = 0; j < len; ++j) {
                const int idx = order[start + j];
                loss += nll_and_grad(arch, w, shard.row(idx), shard.labels[idx], grad, 1.0 / len);
            }
            if (!std::isfinite(loss)) throw TrainingFault("nonfinite baseline loss");
            if (prox_mu != 0.0)
                for (int i = 0; i < d; ++i) grad[i] += prox_mu * (w[i] - global_weights[i]);
            for (int i = 0; i < d; ++i) w[i] -= eta * grad[i];
        }
    }
    return w;
}

inline double deterministic_loss(const MlpArchitecture& arch, const std::vector<double>& w,
                                 const std::vector<double>& global_weights,
                                 const LabeledDataset& shard, double prox_mu) {
    double loss = 0.0;
    for (int i = 0; i < shard.n; ++i)
        loss += nll_and_grad(arch, w, shard.row(i), shard.labels[i], {}, 0.0);
    loss /= shard.n;
    if (prox_mu != 0.0) {
        double prox = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double diff = w[i] - global_weights[i];
            prox += diff * diff;
        }
        loss += 0.5 * prox_mu * prox;
    }
    return loss;
}

}  // namespace detail

/// One FedAvg/FedProx round over the same analog aggregation pipeline:
/// deterministic local SGD, weight-delta encoding with the shared
/// sign/magnitude power control, superposition, and de-biased recovery.
inline BaselineRoundResult baseline_round(const std::vector<double>& global_weights,
                                          const RoundSetup& setup, int round_index,
                                          std::uint64_t master_seed, double prox_mu,
                                          PowerAudit* audit = nullptr) {
    const FLConfig& cfg = *setup.cfg;
    const auto& shards = *setup.shards;
    const int n_devices = static_cast<int>(shards.size());
    const int d = setup.arch->weight_count();

    Rng noise_rng = make_stream(master_seed, seed_tag::kNoise, round_index);
    BaselineRoundResult result;
    result.log.round = round_index;

    std::vector<int> active;
    std::vector<std::vector<double>> deltas;
    std::vector<double> losses;
    for (int k = 0; k < n_devices; ++k) {
        Rng dev_rng = make_stream(master_seed, seed_tag::kDevice, round_index, k, 1);
        try {
            auto w = detail::deterministic_local_train(*setup.arch, global_weights, shards[k],
                                                       cfg.learning_rate, cfg.local_epochs,
                                                       cfg.batch_size, prox_mu, dev_rng);
            losses.push_back(
                detail::deterministic_loss(*setup.arch, w, global_weights, shards[k], prox_mu));
            std::vector<double> delta(d);
            for (int i = 0; i < d; ++i) delta[i] = w[i] - global_weights[i];
            deltas.push_back(std::move(delta));
            active.push_back(k);
        } catch (const TrainingFault&) {
            result.log.excluded_devices += 1;
        }
    }

    const auto pis_active = detail::renormalize(*setup.pis, active);
    const auto agg =
        detail::aggregate_phase(deltas, pis_active, active, setup, noise_rng, audit);
    result.log.xi_rho_norm_sq = agg.xi_norm_sq;
    result.log.noise_scale_rho = agg.noise_scale;
    result.log.delta_rho_norm = std::sqrt(norm_sq(agg.delta_hat));
    for (std::size_t k = 0; k < losses.size(); ++k)
        result.log.phase1_loss += pis_active[k] * losses[k];

    result.weights.resize(d);
    for (int i = 0; i < d; ++i) result.weights[i] = global_weights[i] + agg.delta_hat[i];
    return result;
}

inline BaselineRoundResult fedavg_round(const std::vector<double>& global_weights,
                                        const RoundSetup& setup, int round_index,
                                        std::uint64_t master_seed, PowerAudit* audit = nullptr) {
    return baseline_round(global_weights, setup, round_index, master_seed, 0.0, audit);
}

inline BaselineRoundResult fedprox_round(const std::vector<double>& global_weights,
                                         const RoundSetup& setup, int round_index,
                                         std::uint64_t master_seed, double prox_mu,
                                         PowerAudit* audit = nullptr) {
    return baseline_round(global_weights, setup, round_index, master_seed, prox_mu, audit);
}

/// Running aggregates of the per-round distortion and noise terms, plus a
/// crude secant estimate of the per-phase gradient-smoothness constants from
/// successive aggregated update norms. The smoothness values and the bound
/// derived from them are estimates, not measured constants.
struct ConvergenceDiagnostics {
    int rounds = 0;
    double xi_rho_sum = 0.0;
    double xi_nu_sum = 0.0;
    double noise_rho_sum = 0.0;
    double noise_nu_sum = 0.0;
    double learning_rate = 0.1;

    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    double best_loss = std::numeric_limits<double>::quiet_NaN();
    double prev_delta_rho_norm = std::numeric_limits<double>::quiet_NaN();
    double prev_delta_nu_norm = std::numeric_limits<double>::quiet_NaN();
    double lambda_rho_hat = std::numeric_limits<double>::quiet_NaN();
    double lambda_nu_hat = std::numeric_limits<double>::quiet_NaN();

    double mean_xi_rho_sq() const { return rounds ? xi_rho_sum / rounds : 0.0; }
    double mean_xi_nu_sq() const { return rounds ? xi_nu_sum / rounds : 0.0; }
    double mean_noise_scale_rho() const { return rounds ? noise_rho_sum / rounds : 0.0; }
    double mean_noise_scale_nu() const { return rounds ? noise_nu_sum / rounds : 0.0; }

    /// Estimated asymptotic upper bound on the round-averaged squared
    /// gradient norms: mean distortion plus the decaying initial-gap term.
    double bound_rhs() const {
        if (rounds == 0) return std::numeric_limits<double>::quiet_NaN();
        return mean_xi_rho_sq() + mean_xi_nu_sq() +
               (initial_loss - best_loss) / std::sqrt(static_cast<double>(rounds));
    }
};

inline ConvergenceDiagnostics diagnostics_update(const RoundLog& log,
                                                 ConvergenceDiagnostics diag) {
    diag.rounds += 1;
    diag.xi_rho_sum += log.xi_rho_norm_sq;
    diag.xi_nu_sum += log.xi_nu_norm_sq;
    diag.noise_rho_sum += log.noise_scale_rho;
    diag.noise_nu_sum += log.noise_scale_nu;

    const double round_loss = log.phase2_loss != 0.0 ? log.phase2_loss : log.phase1_loss;
    if (std::isnan(diag.initial_loss)) diag.initial_loss = round_loss;
    if (std::isnan(diag.best_loss) || round_loss < diag.best_loss) diag.best_loss = round_loss;

    const auto secant = [eta = diag.learning_rate](double prev, double cur, double hat) {
        if (std::isnan(prev) || prev <= 0.0 || eta <= 0.0) return hat;
        const double cand = std::abs(cur - prev) / (eta * prev);
        return std::isnan(hat) ? cand : std::max(hat, cand);
    };
    diag.lambda_rho_hat = secant(diag.prev_delta_rho_norm, log.delta_rho_norm, diag.lambda_rho_hat);
    diag.lambda_nu_hat = secant(diag.prev_delta_nu_norm, log.delta_nu_norm, diag.lambda_nu_hat);
    diag.prev_delta_rho_norm = log.delta_rho_norm;
    diag.prev_delta_nu_norm = log.delta_nu_norm;
    return diag;
}

struct TrainingRun {
    Method method = Method::BayesAircomp;
    std::vector<RoundLog> logs;
    DiagonalGaussian final_posterior;   // Bayesian methods
    std::vector<double> final_weights;  // baseline methods
    ConvergenceDiagnostics diagnostics;
    std::vector<double> pis;
    int weight_count = 0;
    PowerAudit power_audit;
    EvalResult final_eval;
};

/// A full training run: placement, partition, and model init derived from
/// the config seed, fading resampled independently every round, metrics
/// evaluated on the held-out test set each round.
inline TrainingRun run_training(Method method, const FLConfig& cfg, const LabeledDataset& train,
                                const LabeledDataset& test, int labels_per_device,
                                double poisson_mean, const WallClock& clock = {}) {
    cfg.validate();
    if (train.n == 0 || test.n == 0) throw std::invalid_argument("run_training: empty dataset");
    const WallClock wall = clock ? clock : steady_wall_clock();

    const MlpArchitecture arch{
        {{train.p, cfg.hidden_units}, {cfg.hidden_units, train.num_classes}}};
    const int d = arch.weight_count();

    PartitionSpec pspec;
    pspec.devices = cfg.devices;
    pspec.labels_per_device = labels_per_device;
    pspec.poisson_mean = poisson_mean;
    pspec.seed = mix_seed(cfg.seed, seed_tag::kPartition);
    auto [shards, pis] = partition(train, pspec);

    Rng topo_rng = make_stream(cfg.seed, seed_tag::kTopology);
    const Topology topo =
        place_devices(cfg.devices, cfg.coverage_radius, cfg.pathloss_exponent, topo_rng);

    Rng init_rng = make_stream(cfg.seed, seed_tag::kInit);
    BayesianClassifier model = BayesianClassifier::init(arch, cfg.init_sigma, init_rng);

    TrainingRun run;
    run.method = method;
    run.pis = pis;
    run.weight_count = d;
    run.diagnostics.learning_rate = cfg.learning_rate;
    run.final_weights = model.posterior.mean;  // baseline start = initial means

    const bool bayes = method == Method::BayesAircomp || method == Method::BayesIdeal;
    for (int t = 0; t < cfg.rounds; ++t) {
        const double t0 = wall();
        Rng channel_rng = make_stream(cfg.seed, seed_tag::kChannel, t);
        const ChannelRealization channel =
            sample_block_fading(topo, cfg.subchannels, cfg.noise_power, channel_rng);

        RoundSetup setup;
        setup.cfg = &cfg;
        setup.arch = &arch;
        setup.shards = &shards;
        setup.pis = &pis;
        setup.channel = &channel;
        setup.bypass_channel = method == Method::BayesIdeal;

        RoundLog log;
        if (bayes) {
            auto round = run_round(model.posterior, setup, t, cfg.seed, &run.power_audit);
            model.posterior = std::move(round.posterior);
            log = round.log;
        } else {
            const double prox = method == Method::FedproxAircomp ? cfg.fedprox_mu : 0.0;
            auto round =
                baseline_round(run.final_weights, setup, t, cfg.seed, prox, &run.power_audit);
            run.final_weights = std::move(round.weights);
            log = round.log;
        }

        Rng eval_rng = make_stream(cfg.seed, seed_tag::kEval, t);
        const EvalResult eval =
            bayes ? evaluate(model, test, cfg.mc_samples, eval_rng)
                  : evaluate_deterministic(arch, run.final_weights, test);
        log.test_accuracy = eval.accuracy;
        log.ece = ece(eval.predictions);
        log.wall_ms = wall() - t0;

        run.diagnostics = diagnostics_update(log, run.diagnostics);
        run.logs.push_back(log);
        if (t + 1 == cfg.rounds) run.final_eval = eval;
    }
    if (bayes) run.final_posterior = model.posterior;
    return run;
}

}  // namespace airbfl
