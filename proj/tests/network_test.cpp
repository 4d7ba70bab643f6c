#include "airbfl/network.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace {

using airbfl::MlpArchitecture;

TEST(MlpArchitecture, WeightCount) {
    const MlpArchitecture arch{{{2, 3}, {3, 4}}};
    EXPECT_EQ(arch.weight_count(), 2 * 3 + 3 + 3 * 4 + 4);
    EXPECT_EQ(arch.input_dim(), 2);
    EXPECT_EQ(arch.output_dim(), 4);
}

TEST(MlpArchitecture, RejectsFanMismatch) {
    const MlpArchitecture arch{{{2, 3}, {4, 4}}};
    EXPECT_THROW(arch.validate(), std::invalid_argument);
}

TEST(Forward, IdentitySingleLayer) {
    const MlpArchitecture arch{{{2, 2}}};
    // W = I, b = 0 in [out][in] row-major order, biases after the matrix.
    const std::vector<double> w{1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
    const std::vector<double> x{0.3, -0.7};
    const auto logits = airbfl::forward_logits(arch, w, x);
    EXPECT_DOUBLE_EQ(logits[0], 0.3);
    EXPECT_DOUBLE_EQ(logits[1], -0.7);
    const auto probs = airbfl::forward_probs(arch, w, x);
    EXPECT_NEAR(probs[0] + probs[1], 1.0, 1e-15);
}

TEST(Backprop, MatchesFiniteDifferences) {
    const MlpArchitecture arch{{{4, 4}, {4, 2}}};
    const int d = arch.weight_count();
    ASSERT_EQ(d, 30);
    airbfl::Rng rng(17);
    auto w = airbfl::he_normal_init(arch, rng);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& b : w) b += 0.05 * dist(rng);  // move biases off zero too
    const std::vector<double> x{0.8, -1.2, 0.4, 2.0};
    const int label = 1;

    std::vector<double> grad(d, 0.0);
    airbfl::nll_and_grad(arch, w, x, label, grad, 1.0);

    const double h = 1e-6;
    for (int i = 0; i < d; ++i) {
        auto wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        std::vector<double> sink(d, 0.0);
        const double fp = airbfl::nll_and_grad(arch, wp, x, label, sink, 0.0);
        const double fm = airbfl::nll_and_grad(arch, wm, x, label, sink, 0.0);
        const double fd = (fp - fm) / (2.0 * h);
        EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd)))
            << "weight index " << i;
    }
}

TEST(Backprop, GradScaleAccumulates) {
    const MlpArchitecture arch{{{2, 2}}};
    const std::vector<double> w{0.2, -0.1, 0.4, 0.3, 0.0, 0.1};
    const std::vector<double> x{1.0, 2.0};
    std::vector<double> g1(w.size(), 0.0), g2(w.size(), 0.0);
    airbfl::nll_and_grad(arch, w, x, 0, g1, 1.0);
    airbfl::nll_and_grad(arch, w, x, 0, g2, 0.5);
    airbfl::nll_and_grad(arch, w, x, 0, g2, 0.5);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(g2[i], g1[i], 1e-15);
}

TEST(HeInit, BiasesZeroMatrixScaled) {
    const MlpArchitecture arch{{{100, 50}, {50, 10}}};
    airbfl::Rng rng(23);
    const auto w = airbfl::he_normal_init(arch, rng);
    // Bias block of the first layer.
    for (int i = 0; i < 50; ++i) EXPECT_EQ(w[100 * 50 + i], 0.0);
    double sq = 0.0;
    for (int i = 0; i < 100 * 50; ++i) sq += w[i] * w[i];
    const double sd = std::sqrt(sq / (100 * 50));
    EXPECT_NEAR(sd, std::sqrt(2.0 / 100), 0.01);
}

}  // namespace
