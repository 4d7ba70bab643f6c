#pragma once

#include <cstdint>

namespace airbfl {

/// One append-only record per training round. The starred fields form the
/// CSV row schema (in this order): round, phase1_loss, phase2_loss,
/// xi_rho_sq, xi_nu_sq, noise_scale_rho, noise_scale_nu, test_acc, ece,
/// wall_ms. Baselines have a single training phase and log it in the
/// phase-1/rho columns, with the phase-2 columns zero.
struct RoundLog {
    int round = 0;
    double phase1_loss = 0.0;
    double phase2_loss = 0.0;
    double xi_rho_norm_sq = 0.0;
    double xi_nu_norm_sq = 0.0;
    double noise_scale_rho = 0.0;
    double noise_scale_nu = 0.0;
    double test_accuracy = 0.0;
    double ece = 0.0;
    double wall_ms = 0.0;

    // Diagnostics beyond the CSV schema.
    std::uint64_t posterior_digest = 0;
    double delta_rho_norm = 0.0;  // ||Delta_hat_rho||
    double delta_nu_norm = 0.0;   // ||Delta_hat_nu||
    int precision_clamp_count = 0;
    int excluded_devices = 0;
};

}  // namespace airbfl
