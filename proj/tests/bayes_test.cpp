#include "airbfl/bayes.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

namespace {

using airbfl::BayesianClassifier;
using airbfl::DiagonalGaussian;
using airbfl::LabeledDataset;
using airbfl::MlpArchitecture;
using airbfl::Phase;
using airbfl::PhaseState;

LabeledDataset two_blob_dataset(int n, int p, double separation, std::uint64_t seed) {
    airbfl::Rng rng(seed);
    return airbfl::synth_dataset(2, n, p, separation, rng);
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

TEST(SampleWeightsPhase1, ZeroNoiseGivesFrozenMean) {
    PhaseState s;
    s.phase = Phase::RhoPhase;
    s.trainable = {2.0, 3.0, 4.0};
    s.frozen_mean = {0.5, -1.0, 2.5};
    const std::vector<double> eps(3, 0.0);
    EXPECT_EQ(airbfl::sample_weights_phase1(s, eps), s.frozen_mean);
}

TEST(SampleWeightsPhase1, DirectFormula) {
    PhaseState s;
    s.phase = Phase::RhoPhase;
    s.trainable = {4.0, 4.0};
    s.frozen_mean = {0.0, 0.0};
    const std::vector<double> eps{1.0, -1.0};
    const auto w = airbfl::sample_weights_phase1(s, eps);
    EXPECT_DOUBLE_EQ(w[0], 0.5);
    EXPECT_DOUBLE_EQ(w[1], -0.5);
}

TEST(SampleWeightsPhase1, EmpiricalMoments) {
    PhaseState s;
    s.phase = Phase::RhoPhase;
    s.trainable = {4.0, 0.25};
    s.frozen_mean = {1.0, -2.0};
    const int n = 100000;
    airbfl::Rng rng(31);
    std::vector<double> sum(2, 0.0), sq(2, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto eps = airbfl::standard_normal(rng, 2);
        const auto w = airbfl::sample_weights_phase1(s, eps);
        for (int j = 0; j < 2; ++j) {
            sum[j] += w[j];
            sq[j] += (w[j] - s.frozen_mean[j]) * (w[j] - s.frozen_mean[j]);
        }
    }
    for (int j = 0; j < 2; ++j) {
        const double var = 1.0 / s.trainable[j];
        const double sd = std::sqrt(var);
        EXPECT_NEAR(sum[j] / n, s.frozen_mean[j], 3.0 * sd / std::sqrt(n));
        EXPECT_NEAR(sq[j] / n, var, 3.0 * var * std::sqrt(2.0 / n));
    }
}

TEST(SampleWeightsPhase2, InitRecoverGlobalMean) {
    const std::vector<double> mu{0.75, -2.5, 1.0};
    // Power-of-two precision ratios make the scale round-trip exact.
    const std::vector<double> rho_local{2.0, 8.0, 0.5};
    const std::vector<double> rho_next{4.0, 2.0, 1.0};
    const auto s = PhaseState::nu_phase(mu, rho_local, rho_next);
    EXPECT_EQ(s.sampling_mean(), mu);

    const std::vector<double> rho_local2{1.7, 0.31, 9.2};
    const std::vector<double> rho_next2{2.9, 5.11, 0.77};
    const auto s2 = PhaseState::nu_phase(mu, rho_local2, rho_next2);
    const auto m2 = s2.sampling_mean();
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(m2[i], mu[i], 4e-16 * std::abs(mu[i]));

    const std::vector<double> eps(3, 0.0);
    EXPECT_EQ(airbfl::sample_weights_phase2(s, eps), s.sampling_mean());
}

TEST(SampleWeightsPhase2, EmpiricalCovarianceIsFrozen) {
    const std::vector<double> mu{0.0, 1.0};
    const std::vector<double> rho_local{5.0, 0.3};
    const std::vector<double> rho_next{2.0, 10.0};
    const auto s = PhaseState::nu_phase(mu, rho_local, rho_next);
    const int n = 100000;
    airbfl::Rng rng(37);
    const auto m = s.sampling_mean();
    std::vector<double> sq(2, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto eps = airbfl::standard_normal(rng, 2);
        const auto w = airbfl::sample_weights_phase2(s, eps);
        for (int j = 0; j < 2; ++j) sq[j] += (w[j] - m[j]) * (w[j] - m[j]);
    }
    for (int j = 0; j < 2; ++j) {
        const double var = 1.0 / rho_next[j];
        EXPECT_NEAR(sq[j] / n, var, 3.0 * var * std::sqrt(2.0 / n));
    }
}

TEST(PhaseState, WeightedNuInitRecoversGlobalMean) {
    // With the next precision formed as the weighted precision sum, the
    // weighted nu initializations telescope back to the global mean.
    airbfl::Rng rng(41);
    std::uniform_real_distribution<double> prec(0.1, 10.0);
    std::uniform_real_distribution<double> mean(-2.0, 2.0);
    const std::vector<double> pis{0.2, 0.3, 0.5};
    const int d = 16;
    std::vector<double> mu(d);
    for (auto& v : mu) v = mean(rng);
    std::vector<std::vector<double>> rho_local(3, std::vector<double>(d));
    std::vector<double> rho_next(d, 0.0);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < d; ++i) rho_local[k][i] = prec(rng);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < 3; ++k) rho_next[i] += pis[k] * rho_local[k][i];

    std::vector<double> recovered(d, 0.0);
    for (int k = 0; k < 3; ++k) {
        const auto s = PhaseState::nu_phase(mu, rho_local[k], rho_next);
        for (int i = 0; i < d; ++i) recovered[i] += pis[k] * s.trainable[i];
    }
    for (int i = 0; i < d; ++i)
        EXPECT_NEAR(recovered[i], mu[i], 1e-12 * std::max(1.0, std::abs(mu[i])));
}

TEST(LocalCost, LambdaZeroDropsRegularizer) {
    const MlpArchitecture arch{{{2, 2}}};
    airbfl::Rng rng(5);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const auto data = two_blob_dataset(6, 2, 4.0, 9);
    auto state = PhaseState::rho_phase(model.posterior);
    state.trainable[0] *= 2.0;  // make the KL strictly positive
    const auto idx = all_indices(data.n);
    const auto r0 = airbfl::local_cost(model, state, model.posterior, data, idx, 0.0, 4, 77);
    EXPECT_GT(r0.reg_loss, 0.0);
    EXPECT_DOUBLE_EQ(r0.total, r0.task_loss);
    const auto r1 = airbfl::local_cost(model, state, model.posterior, data, idx, 0.5, 4, 77);
    EXPECT_DOUBLE_EQ(r1.total, r1.task_loss + 0.5 * r1.reg_loss);
    EXPECT_EQ(r1.mc_samples_used, 4);
}

TEST(LocalCost, RegZeroAtPrior) {
    const MlpArchitecture arch{{{2, 2}}};
    airbfl::Rng rng(6);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const auto data = two_blob_dataset(4, 2, 4.0, 10);
    const auto state = PhaseState::rho_phase(model.posterior);
    const auto idx = all_indices(data.n);
    const auto r = airbfl::local_cost(model, state, model.posterior, data, idx, 1.0, 2, 3);
    EXPECT_EQ(r.reg_loss, 0.0);
}

TEST(LocalCost, MatchesHandComputedTwoClassCase) {
    // Smallest real classifier: one input, two softmax outputs (a logistic
    // model in disguise). Recompute the MC task term and the closed-form KL
    // from scratch at the same noise draws.
    const MlpArchitecture arch{{{1, 2}}};
    BayesianClassifier model;
    model.arch = arch;
    model.posterior = DiagonalGaussian{{0.4, -0.2, 0.1, 0.0}, {4.0, 2.0, 1.0, 8.0}};

    LabeledDataset data;
    data.n = 1;
    data.p = 1;
    data.num_classes = 2;
    data.inputs = {1.5};
    data.labels = {1};

    PhaseState state = PhaseState::rho_phase(model.posterior);
    state.trainable = {5.0, 1.0, 2.0, 8.0};  // off-prior precisions

    const double lambda = 0.37;
    const int mc = 3;
    const std::uint64_t seed = 1234;
    const auto idx = all_indices(1);
    const auto got = airbfl::local_cost(model, state, model.posterior, data, idx, lambda, mc, seed);

    airbfl::Rng noise = airbfl::make_stream(seed, 0xe5c0u);
    double task = 0.0;
    for (int m = 0; m < mc; ++m) {
        const auto eps = airbfl::standard_normal(noise, 4);
        double w[4];
        for (int i = 0; i < 4; ++i)
            w[i] = eps[i] / std::sqrt(state.trainable[i]) + model.posterior.mean[i];
        const double z0 = w[0] * 1.5 + w[2];
        const double z1 = w[1] * 1.5 + w[3];
        // -log softmax(z)[1]
        const double zmax = std::max(z0, z1);
        task += -(z1 - zmax) + std::log(std::exp(z0 - zmax) + std::exp(z1 - zmax));
    }
    task /= mc;

    double reg = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double r = state.trainable[i], rt = model.posterior.precision[i];
        reg += 0.5 * (std::log(r / rt) + rt / r - 1.0);
    }

    EXPECT_NEAR(got.task_loss, task, 1e-12);
    EXPECT_NEAR(got.reg_loss, reg, 1e-12);
    EXPECT_NEAR(got.total, task + lambda * reg, 1e-12);
}

TEST(GradLocalCost, KlOnlyGradientVanishesAtPrior) {
    const MlpArchitecture arch{{{2, 2}}};
    airbfl::Rng rng(8);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const auto state = PhaseState::rho_phase(model.posterior);
    LabeledDataset empty;
    empty.p = 2;
    empty.num_classes = 2;
    const auto grad = airbfl::grad_local_cost(model, state, model.posterior, empty, {}, 1.0, 1, 5);
    for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(GradLocalCost, MatchesFiniteDifferencesBothPhases) {
    const MlpArchitecture arch{{{4, 4}, {4, 2}}};
    ASSERT_EQ(arch.weight_count(), 30);
    airbfl::Rng rng(12);
    auto model = BayesianClassifier::init(arch, 0.3, rng);
    const auto data = two_blob_dataset(8, 4, 3.0, 21);
    const auto idx = all_indices(data.n);
    const double lambda = 0.3;
    const int mc = 3;
    const std::uint64_t seed = 999;

    auto check = [&](PhaseState state, const DiagonalGaussian& prior) {
        const auto grad =
            airbfl::grad_local_cost(model, state, prior, data, idx, lambda, mc, seed);
        const double h = 1e-5;
        double num = 0.0, den = 0.0;
        for (int i = 0; i < 30; ++i) {
            auto sp = state, sm = state;
            sp.trainable[i] += h;
            sm.trainable[i] -= h;
            const double fp =
                airbfl::local_cost(model, sp, prior, data, idx, lambda, mc, seed).total;
            const double fm =
                airbfl::local_cost(model, sm, prior, data, idx, lambda, mc, seed).total;
            const double fd = (fp - fm) / (2.0 * h);
            num += (grad[i] - fd) * (grad[i] - fd);
            den += fd * fd;
        }
        EXPECT_LE(std::sqrt(num), 1e-4 * std::sqrt(den));
    };

    PhaseState rho_state = PhaseState::rho_phase(model.posterior);
    for (auto& r : rho_state.trainable) r *= 1.3;
    check(rho_state, model.posterior);

    std::vector<double> rho_local = model.posterior.precision;
    std::vector<double> rho_next = model.posterior.precision;
    for (std::size_t i = 0; i < rho_local.size(); ++i) {
        rho_local[i] *= 0.8 + 0.02 * (i % 7);
        rho_next[i] *= 1.1 + 0.03 * (i % 5);
    }
    PhaseState nu_state = PhaseState::nu_phase(model.posterior.mean, rho_local, rho_next);
    for (auto& v : nu_state.trainable) v += 0.05;  // off the initialization
    const DiagonalGaussian prior2{model.posterior.mean, rho_next};
    check(nu_state, prior2);
}

TEST(GradLocalCost, TaskGradientLinearInBatch) {
    const MlpArchitecture arch{{{2, 3}, {3, 2}}};
    airbfl::Rng rng(14);
    auto model = BayesianClassifier::init(arch, 0.2, rng);
    const auto data = two_blob_dataset(2, 2, 3.0, 33);
    const auto state = PhaseState::rho_phase(model.posterior);
    const std::uint64_t seed = 31;
    const std::vector<int> a{0}, b{1}, ab{0, 1};
    const auto ga = airbfl::grad_local_cost(model, state, model.posterior, data, a, 0.0, 2, seed);
    const auto gb = airbfl::grad_local_cost(model, state, model.posterior, data, b, 0.0, 2, seed);
    const auto gab =
        airbfl::grad_local_cost(model, state, model.posterior, data, ab, 0.0, 2, seed);
    for (std::size_t i = 0; i < ga.size(); ++i)
        EXPECT_NEAR(gab[i], 0.5 * (ga[i] + gb[i]), 1e-12 * std::max(1.0, std::abs(gab[i])));
}

TEST(LocalTrain, NoEpochsOrZeroRateLeaveStateUntouched) {
    const MlpArchitecture arch{{{2, 2}}};
    airbfl::Rng rng(15);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const auto data = two_blob_dataset(5, 2, 3.0, 44);
    const auto state = PhaseState::rho_phase(model.posterior);

    airbfl::LocalTrainParams params;
    params.epochs = 0;
    airbfl::Rng r1(1);
    const auto s1 = airbfl::local_train(model, state, model.posterior, data, params, r1);
    EXPECT_EQ(s1.trainable, state.trainable);

    params.epochs = 3;
    params.learning_rate = 0.0;
    airbfl::Rng r2(1);
    const auto s2 = airbfl::local_train(model, state, model.posterior, data, params, r2);
    EXPECT_EQ(s2.trainable, state.trainable);
}

TEST(LocalTrain, TaskLossDecreasesOnSeparableData) {
    const MlpArchitecture arch{{{2, 4}, {4, 2}}};
    airbfl::Rng rng(16);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const auto data = two_blob_dataset(20, 2, 6.0, 55);
    const auto idx = all_indices(data.n);

    // Mean training (frozen covariance) on linearly separable blobs.
    const auto nu0 =
        PhaseState::nu_phase(model.posterior.mean, model.posterior.precision,
                             model.posterior.precision);
    airbfl::LocalTrainParams params;
    params.epochs = 1;
    params.learning_rate = 0.05;
    params.kl_weight = 0.0;

    airbfl::Rng train_rng(7);
    PhaseState state = nu0;
    double prev = airbfl::local_cost(model, state, model.posterior, data, idx, 0.0, 4, 123)
                      .task_loss;
    for (int epoch = 0; epoch < 3; ++epoch) {
        state = airbfl::local_train(model, state, model.posterior, data, params, train_rng);
        const double cur =
            airbfl::local_cost(model, state, model.posterior, data, idx, 0.0, 4, 123).task_loss;
        EXPECT_LT(cur, prev) << "epoch " << epoch;
        prev = cur;
    }
}

TEST(PredictMc, DegeneratePosteriorMatchesDeterministicPass) {
    const MlpArchitecture arch{{{3, 4}, {4, 3}}};
    airbfl::Rng rng(18);
    auto model = BayesianClassifier::init(arch, 0.2, rng);
    for (auto& p : model.posterior.precision) p = 1e20;  // variance 1e-20
    const std::vector<double> x{0.5, -0.3, 1.0};
    airbfl::Rng prng(2);
    const auto probs = airbfl::predict_mc(model, x, 1, prng);
    const auto direct = airbfl::forward_probs(arch, model.posterior.mean, x);
    for (std::size_t c = 0; c < probs.size(); ++c) EXPECT_NEAR(probs[c], direct[c], 1e-6);
}

TEST(PredictMc, SumsToOne) {
    const MlpArchitecture arch{{{4, 8}, {8, 10}}};
    airbfl::Rng rng(19);
    auto model = BayesianClassifier::init(arch, 0.5, rng);
    airbfl::Rng prng(3);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(4);
        for (auto& v : x) v = dist(prng);
        const auto probs = airbfl::predict_mc(model, x, 3, prng);
        double sum = 0.0;
        for (double p : probs) sum += p;
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(PredictMc, SplitHalvesAgreeWithinMcError) {
    const MlpArchitecture arch{{{2, 4}, {4, 3}}};
    airbfl::Rng rng(20);
    auto model = BayesianClassifier::init(arch, 0.1, rng);
    const std::vector<double> x{0.7, -0.2};
    airbfl::Rng r64(100), r32a(200), r32b(300);
    const auto p64 = airbfl::predict_mc(model, x, 64, r64);
    const auto pa = airbfl::predict_mc(model, x, 32, r32a);
    const auto pb = airbfl::predict_mc(model, x, 32, r32b);
    for (std::size_t c = 0; c < p64.size(); ++c)
        EXPECT_NEAR(p64[c], 0.5 * (pa[c] + pb[c]), 0.05);
}

TEST(LocalCost, NonfiniteLossRaisesTrainingFault) {
    const MlpArchitecture arch{{{1, 2}}};
    BayesianClassifier model;
    model.arch = arch;
    // Extreme logit gap makes the correct-class probability underflow to 0.
    model.posterior = DiagonalGaussian{{800.0, -800.0, 0.0, 0.0},
                                       std::vector<double>(4, 1e8)};
    LabeledDataset data;
    data.n = 1;
    data.p = 1;
    data.num_classes = 2;
    data.inputs = {1.0};
    data.labels = {1};
    const auto state = PhaseState::rho_phase(model.posterior);
    const auto idx = all_indices(1);
    EXPECT_THROW(
        airbfl::local_cost(model, state, model.posterior, data, idx, 0.0, 1, 7),
        airbfl::TrainingFault);
}

}  // namespace
