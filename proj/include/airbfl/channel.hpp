#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "airbfl/rng.hpp"

namespace airbfl {

using Cx = std::complex<double>;

/// Cell geometry: per-device link distances and the path-loss law.
struct Topology {
    std::vector<double> device_distances;  // meters, in (0, coverage_radius]
    double coverage_radius = 200.0;
    double pathloss_exponent = 4.0;

    int devices() const { return static_cast<int>(device_distances.size()); }
    double channel_variance(int k) const {
        return std::pow(device_distances[k], -pathloss_exponent);
    }
};

/// One round's block-fading draw: per-device complex subchannel gains,
/// constant across all of the round's symbols, plus the effective noise
/// power (which absorbs out-of-cell interference).
struct ChannelRealization {
    std::vector<std::vector<Cx>> gains;  // K x F
    double noise_power = 0.0;            // sigma_z^2, linear watts

    int devices() const { return static_cast<int>(gains.size()); }
    int subchannels() const { return gains.empty() ? 0 : static_cast<int>(gains[0].size()); }
};

struct ReceivedSymbol {
    std::vector<Cx> y;
};

// Devices nearer than this are pushed out to bound the channel variance.
inline constexpr double kMinDeviceDistance = 1.0;

/// Area-uniform placement in the cell disc: r = R sqrt(u), floored at 1 m.
inline Topology place_devices(int devices, double coverage_radius, double pathloss_exponent,
                              Rng& rng) {
    if (devices < 1) throw std::invalid_argument("place_devices: need at least one device");
    if (coverage_radius < kMinDeviceDistance)
        throw std::invalid_argument("place_devices: coverage radius below the distance floor");
    Topology topo;
    topo.coverage_radius = coverage_radius;
    topo.pathloss_exponent = pathloss_exponent;
    topo.device_distances.resize(devices);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& r : topo.device_distances)
        r = std::max(kMinDeviceDistance, coverage_radius * std::sqrt(unit(rng)));
    return topo;
}

/// Rayleigh block fading: h_{k,f} ~ CN(0, r_k^{-alpha}), i.i.d. across
/// devices and subchannels, redrawn independently every round.
inline ChannelRealization sample_block_fading(const Topology& topo, int subchannels,
                                              double noise_power, Rng& rng) {
    ChannelRealization ch;
    ch.noise_power = noise_power;
    ch.gains.resize(topo.devices());
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int k = 0; k < topo.devices(); ++k) {
        const double sd = std::sqrt(topo.channel_variance(k) / 2.0);
        ch.gains[k].resize(subchannels);
        for (auto& h : ch.gains[k]) h = Cx(sd * dist(rng), sd * dist(rng));
    }
    return ch;
}

/// Analog superposition over the shared channel: y = sum_k h_k . x_k + z
/// with z ~ CN(0, sigma_z^2 I).
inline ReceivedSymbol superpose(const std::vector<std::vector<Cx>>& symbols,
                                const ChannelRealization& realization, Rng& rng) {
    if (static_cast<int>(symbols.size()) != realization.devices())
        throw std::invalid_argument("superpose: symbol count != device count");
    const int f_count = realization.subchannels();
    ReceivedSymbol out;
    out.y.assign(f_count, Cx(0.0, 0.0));
    for (int k = 0; k < realization.devices(); ++k) {
        if (static_cast<int>(symbols[k].size()) != f_count)
            throw std::invalid_argument("superpose: symbol length != subchannel count");
        for (int f = 0; f < f_count; ++f) out.y[f] += realization.gains[k][f] * symbols[k][f];
    }
    if (realization.noise_power > 0.0) {
        const double sd = std::sqrt(realization.noise_power / 2.0);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& y : out.y) y += Cx(sd * dist(rng), sd * dist(rng));
    }
    return out;
}

}  // namespace airbfl
