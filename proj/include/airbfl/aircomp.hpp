#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

#include "airbfl/channel.hpp"

namespace airbfl {

/// Fixed invertible grouping of a length-d update vector into ceil(d/F)
/// symbol-sized chunks, zero-padding the last one. Contiguous chunks in
/// flattened weight order.
struct UpdatePlan {
    int total_dim = 0;   // d
    int group_size = 0;  // F

    static constexpr const char* kGroupRuleId = "contiguous-v1";

    int group_count() const { return (total_dim + group_size - 1) / group_size; }

    std::vector<std::vector<double>> group(std::span<const double> delta) const {
        if (static_cast<int>(delta.size()) != total_dim)
            throw std::invalid_argument("UpdatePlan::group: dimension mismatch");
        std::vector<std::vector<double>> groups(group_count());
        for (int n = 0; n < group_count(); ++n) {
            groups[n].assign(group_size, 0.0);
            const int base = n * group_size;
            const int len = std::min(group_size, total_dim - base);
            for (int f = 0; f < len; ++f) groups[n][f] = delta[base + f];
        }
        return groups;
    }

    std::vector<double> regroup(const std::vector<std::vector<double>>& groups) const {
        if (static_cast<int>(groups.size()) != group_count())
            throw std::invalid_argument("UpdatePlan::regroup: group count mismatch");
        std::vector<double> delta(total_dim);
        for (int n = 0; n < group_count(); ++n) {
            const int base = n * group_size;
            const int len = std::min(group_size, total_dim - base);
            for (int f = 0; f < len; ++f) delta[base + f] = groups[n][f];
        }
        return delta;
    }
};

/// One device's encoding of one group: the group's update values, the
/// channel-inversion vector u, the optimized magnitudes v, the power
/// allocation p = u.v.v, and the KKT multiplier of the power constraint.
struct TransmitPlan {
    std::vector<double> delta;
    std::vector<double> u;
    std::vector<double> v;
    std::vector<double> p;
    double kkt_multiplier = 0.0;
};

struct DeviceRoundEncoding {
    std::vector<TransmitPlan> plans;        // one per group
    std::vector<std::vector<Cx>> symbols;   // one per group
};

struct AggregateEstimate {
    std::vector<double> delta_hat;
    double xi_norm_sq = 0.0;   // aggregated update distortion (simulation-side oracle)
    double noise_scale = 0.0;  // delta_bar * sigma_z^2 / gamma
};

/// Weighted mean per-coordinate update power across devices:
/// delta_bar = sum_k (pi_k / d) ||Delta_k||^2. Exchanged as a single
/// error-free scalar in the protocol.
inline double average_update_power(const std::vector<std::vector<double>>& updates,
                                   const std::vector<double>& weights, int total_dim) {
    if (updates.size() != weights.size())
        throw std::invalid_argument("average_update_power: need one weight per update");
    double wsum = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < updates.size(); ++k) {
        if (static_cast<int>(updates[k].size()) != total_dim)
            throw std::invalid_argument("average_update_power: dimension mismatch");
        double norm_sq = 0.0;
        for (double v : updates[k]) norm_sq += v * v;
        acc += weights[k] / total_dim * norm_sq;
        wsum += weights[k];
    }
    if (std::abs(wsum - 1.0) > 1e-12)
        throw std::invalid_argument("average_update_power: weights must sum to 1");
    return acc;
}

/// Channel-inversion vector u = (pi_k^2 gamma / delta_bar) * |h|^-2.
inline std::vector<double> inversion_vector(double pi_k, double gamma, double delta_bar,
                                            std::span<const Cx> h) {
    if (!(delta_bar > 0.0))
        throw std::invalid_argument("inversion_vector: nonpositive average update power");
    std::vector<double> u(h.size());
    const double c = pi_k * pi_k * gamma / delta_bar;
    for (std::size_t f = 0; f < h.size(); ++f) {
        const double h2 = std::norm(h[f]);
        if (!(h2 > 0.0)) throw std::invalid_argument("inversion_vector: zero channel gain");
        u[f] = c / h2;
    }
    return u;
}

struct QcqpSolution {
    std::vector<double> v;
    double kkt_multiplier = 0.0;
};

/// minimize || |Delta| - v ||^2  s.t.  u^T (v.v) <= P, v >= 0.
/// If the constraint is slack at v = |Delta| that is the solution; otherwise
/// v = |Delta| / (1 + lambda u) with the unique lambda > 0 that activates the
/// constraint, found by bisection on the strictly decreasing power curve.
inline QcqpSolution solve_power_qcqp(std::span<const double> abs_delta,
                                     std::span<const double> u, double power_budget) {
    const std::size_t f_count = abs_delta.size();
    if (u.size() != f_count) throw std::invalid_argument("solve_power_qcqp: dimension mismatch");
    if (!(power_budget > 0.0)) throw std::invalid_argument("solve_power_qcqp: P must be > 0");
    for (double uf : u)
        if (!(uf > 0.0)) throw std::invalid_argument("solve_power_qcqp: u must be positive");

    const auto spent_power = [&](double lambda) {
        double acc = 0.0;
        for (std::size_t f = 0; f < f_count; ++f) {
            const double vf = abs_delta[f] / (1.0 + lambda * u[f]);
            acc += u[f] * vf * vf;
        }
        return acc;
    };

    QcqpSolution sol;
    if (spent_power(0.0) <= power_budget) {
        sol.v.assign(abs_delta.begin(), abs_delta.end());
        sol.kkt_multiplier = 0.0;
        return sol;
    }

    double hi = 1.0;
    while (spent_power(hi) >= power_budget) hi *= 2.0;
    double lo = 0.0;
    const double tol = 1e-10 * power_budget;
    double lambda = hi;
    bool converged = false;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double spent = spent_power(mid);
        // Accept only from below so the power budget is never exceeded.
        if (spent <= power_budget && power_budget - spent <= tol) {
            lambda = mid;
            converged = true;
            break;
        }
        if (spent > power_budget)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-300 || hi - lo <= 1e-16 * hi) {
            lambda = hi;  // feasible endpoint
            converged = true;
            break;
        }
    }
    if (!converged) throw std::runtime_error("solve_power_qcqp: bisection did not converge");

    sol.kkt_multiplier = lambda;
    sol.v.resize(f_count);
    for (std::size_t f = 0; f < f_count; ++f) sol.v[f] = abs_delta[f] / (1.0 + lambda * u[f]);
    return sol;
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// x_f = conj(h_f/|h_f|) sgn(Delta_f) sqrt(p_f): phase pre-equalization so
/// the channel output h_f x_f is real, with the optimized magnitude.
inline std::vector<Cx> build_symbol(std::span<const double> delta_group,
                                    std::span<const double> v, std::span<const double> p,
                                    std::span<const Cx> h_group, double power_budget) {
    const std::size_t f_count = delta_group.size();
    if (v.size() != f_count || p.size() != f_count || h_group.size() != f_count)
        throw std::invalid_argument("build_symbol: dimension mismatch");
    double total_power = 0.0;
    for (double pf : p) total_power += pf;
    if (total_power > power_budget + 1e-9)
        throw std::logic_error("build_symbol: power constraint violated");
    std::vector<Cx> x(f_count);
    for (std::size_t f = 0; f < f_count; ++f) {
        const double mag = std::abs(h_group[f]);
        if (!(mag > 0.0)) throw std::invalid_argument("build_symbol: zero channel gain");
        x[f] = std::conj(h_group[f] / mag) * (sign_of(delta_group[f]) * std::sqrt(p[f]));
    }
    return x;
}

/// Grouping, channel inversion, per-group power optimization, and symbol
/// construction for one device's update vector in one phase.
inline DeviceRoundEncoding device_encode_round(std::span<const double> delta, double delta_bar,
                                               double gamma, double pi_k,
                                               std::span<const Cx> h_k, double power_budget,
                                               const UpdatePlan& plan) {
    DeviceRoundEncoding enc;
    const auto u = inversion_vector(pi_k, gamma, delta_bar, h_k);
    const auto groups = plan.group(delta);
    enc.plans.reserve(groups.size());
    enc.symbols.reserve(groups.size());
    for (const auto& g : groups) {
        TransmitPlan tp;
        tp.delta = g;
        tp.u = u;
        std::vector<double> abs_delta(g.size());
        for (std::size_t f = 0; f < g.size(); ++f) abs_delta[f] = std::abs(g[f]);
        auto sol = solve_power_qcqp(abs_delta, u, power_budget);
        tp.v = std::move(sol.v);
        tp.kkt_multiplier = sol.kkt_multiplier;
        tp.p.resize(g.size());
        for (std::size_t f = 0; f < g.size(); ++f) tp.p[f] = u[f] * tp.v[f] * tp.v[f];
        enc.symbols.push_back(build_symbol(tp.delta, tp.v, tp.p, h_k, power_budget));
        enc.plans.push_back(std::move(tp));
    }
    return enc;
}

/// De-biasing and regrouping at the base station:
/// Delta_hat = sqrt(delta_bar/gamma) Re(y), padding dropped. With
/// delta_bar = 0 the round transmitted nothing and the estimate is zero.
inline AggregateEstimate recover_aggregate(const std::vector<ReceivedSymbol>& received,
                                           double delta_bar, double gamma, double noise_power,
                                           const UpdatePlan& plan) {
    if (!(gamma > 0.0)) throw std::invalid_argument("recover_aggregate: gamma must be > 0");
    AggregateEstimate est;
    est.noise_scale = delta_bar * noise_power / gamma;
    if (delta_bar == 0.0) {
        est.delta_hat.assign(plan.total_dim, 0.0);
        return est;
    }
    if (static_cast<int>(received.size()) != plan.group_count())
        throw std::invalid_argument("recover_aggregate: symbol count mismatch");
    const double scale = std::sqrt(delta_bar / gamma);
    std::vector<std::vector<double>> groups(received.size());
    for (std::size_t n = 0; n < received.size(); ++n) {
        groups[n].resize(received[n].y.size());
        for (std::size_t f = 0; f < groups[n].size(); ++f)
            groups[n][f] = scale * received[n].y[f].real();
    }
    est.delta_hat = plan.regroup(groups);
    return est;
}

/// Simulation-side distortion oracle: xi = sum_k pi_k sgn(Delta_k) . e_k
/// with the local update error e_k = (v_k - |Delta_k|) / eta. Returns the
/// full-length vector (padding coordinates are identically zero).
inline std::vector<double> aggregate_distortion(
    const std::vector<const DeviceRoundEncoding*>& encodings, const std::vector<double>& weights,
    double eta, const UpdatePlan& plan) {
    std::vector<double> xi(plan.total_dim, 0.0);
    for (std::size_t k = 0; k < encodings.size(); ++k) {
        const auto& plans = encodings[k]->plans;
        for (int n = 0; n < plan.group_count(); ++n) {
            const int base = n * plan.group_size;
            const int len = std::min(plan.group_size, plan.total_dim - base);
            const auto& tp = plans[n];
            for (int f = 0; f < len; ++f) {
                const double e = (tp.v[f] - std::abs(tp.delta[f])) / eta;
                xi[base + f] += weights[k] * sign_of(tp.delta[f]) * e;
            }
        }
    }
    return xi;
}

inline double norm_sq(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

}  // namespace airbfl
