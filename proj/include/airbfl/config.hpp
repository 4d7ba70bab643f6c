#pragma once

#include <cstdint>
#include <stdexcept>

#include "airbfl/units.hpp"

namespace airbfl {

/// Protocol and training hyper-parameters. Powers are linear watts and the
/// scaling coefficient is linear; the config file and CLI accept dBm/dB and
/// convert on parse.
struct FLConfig {
    int devices = 40;                                 // K
    int subchannels = 1024;                           // F
    double symbol_power = dbm_to_watts(23.0);         // P
    double noise_power = dbm_to_watts(-74.0);         // sigma_z^2
    double power_scaling = db_to_linear(10.0);        // gamma
    double learning_rate = 0.1;                       // eta
    double kl_weight = 1.0 / 50000.0;                 // lambda
    int local_epochs = 3;                             // E
    int batch_size = 10;                              // B
    int mc_samples = 5;                               // M
    int rounds = 100;                                 // T
    double pathloss_exponent = 4.0;                   // alpha
    double coverage_radius = 200.0;                   // r_cvge
    std::uint64_t seed = 1;

    // Model and baseline knobs (not protocol parameters).
    int hidden_units = 32;
    double init_sigma = 0.1;
    double fedprox_mu = 0.01;

    /// Symbols per phase for a d-weight model: N1 = N2 = ceil(d/F).
    int symbols_per_phase(int weight_count) const {
        return (weight_count + subchannels - 1) / subchannels;
    }

    void validate() const {
        if (devices < 1) throw std::invalid_argument("config.devices: must be >= 1");
        if (subchannels < 1) throw std::invalid_argument("config.subchannels: must be >= 1");
        if (!(symbol_power > 0.0)) throw std::invalid_argument("config.symbol_power: must be > 0");
        if (noise_power < 0.0) throw std::invalid_argument("config.noise_power: must be >= 0");
        if (!(power_scaling > 0.0))
            throw std::invalid_argument("config.power_scaling: must be > 0");
        if (learning_rate < 0.0) throw std::invalid_argument("config.learning_rate: must be >= 0");
        if (kl_weight < 0.0) throw std::invalid_argument("config.kl_weight: must be >= 0");
        if (local_epochs < 0) throw std::invalid_argument("config.local_epochs: must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("config.batch_size: must be >= 1");
        if (mc_samples < 1) throw std::invalid_argument("config.mc_samples: must be >= 1");
        if (rounds < 0) throw std::invalid_argument("config.rounds: must be >= 0");
        if (!(coverage_radius > 0.0))
            throw std::invalid_argument("config.coverage_radius: must be > 0");
        if (hidden_units < 1) throw std::invalid_argument("config.hidden_units: must be >= 1");
        if (!(init_sigma > 0.0)) throw std::invalid_argument("config.init_sigma: must be > 0");
        if (fedprox_mu < 0.0) throw std::invalid_argument("config.fedprox_mu: must be >= 0");
    }
};

}  // namespace airbfl
