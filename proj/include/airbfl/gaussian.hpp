#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace airbfl {

/// Mean-field Gaussian over a weight vector, parameterized by mean and
/// per-coordinate precision (inverse variance). Precision is the quantity
/// that aggregates additively under conflation, so it is the stored form.
struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> precision;

    std::size_t dim() const { return mean.size(); }

    std::vector<double> variance() const {
        std::vector<double> var(precision.size());
        for (std::size_t i = 0; i < precision.size(); ++i) var[i] = 1.0 / precision[i];
        return var;
    }

    std::vector<double> stddev() const {
        std::vector<double> sd(precision.size());
        for (std::size_t i = 0; i < precision.size(); ++i) sd[i] = 1.0 / std::sqrt(precision[i]);
        return sd;
    }

    static DiagonalGaussian isotropic(std::size_t d, double mean_value, double precision_value) {
        return {std::vector<double>(d, mean_value), std::vector<double>(d, precision_value)};
    }

    void validate() const {
        if (mean.size() != precision.size())
            throw std::invalid_argument("DiagonalGaussian: mean/precision dimension mismatch");
        for (std::size_t i = 0; i < precision.size(); ++i)
            if (!(precision[i] > 0.0))
                throw std::invalid_argument("DiagonalGaussian: nonpositive precision at index " +
                                            std::to_string(i));
    }
};

/// KL(q1 || q2) for diagonal Gaussians, in precision form:
///   1/2 sum_i [ log(p1_i/p2_i) + p2_i/p1_i + p2_i (mu2_i - mu1_i)^2 - 1 ].
inline double kl_divergence(const DiagonalGaussian& q1, const DiagonalGaussian& q2) {
    q1.validate();
    q2.validate();
    if (q1.dim() != q2.dim())
        throw std::invalid_argument("kl_divergence: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < q1.dim(); ++i) {
        const double p1 = q1.precision[i];
        const double p2 = q2.precision[i];
        const double dm = q2.mean[i] - q1.mean[i];
        acc += std::log(p1 / p2) + p2 / p1 + p2 * dm * dm - 1.0;
    }
    return 0.5 * acc;
}

/// Normalized weighted product of Gaussians: precisions combine as the
/// weighted sum, means as the precision-weighted average. Weights must be
/// nonnegative and sum to 1 within 1e-12.
inline DiagonalGaussian conflate(const std::vector<DiagonalGaussian>& posteriors,
                                 const std::vector<double>& weights) {
    if (posteriors.empty() || posteriors.size() != weights.size())
        throw std::invalid_argument("conflate: need one weight per posterior");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("conflate: negative weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
        throw std::invalid_argument("conflate: weights sum to " + std::to_string(wsum));
    const std::size_t d = posteriors.front().dim();
    for (const auto& q : posteriors) {
        q.validate();
        if (q.dim() != d) throw std::invalid_argument("conflate: dimension mismatch");
    }

    DiagonalGaussian out;
    out.mean.assign(d, 0.0);
    out.precision.assign(d, 0.0);
    for (std::size_t k = 0; k < posteriors.size(); ++k) {
        const auto& q = posteriors[k];
        const double w = weights[k];
        for (std::size_t i = 0; i < d; ++i) {
            const double wp = w * q.precision[i];
            out.precision[i] += wp;
            out.mean[i] += wp * q.mean[i];
        }
    }
    for (std::size_t i = 0; i < d; ++i) out.mean[i] /= out.precision[i];
    return out;
}

/// FNV-1a over the raw bytes of mean then precision; round-log snapshot id.
inline std::uint64_t posterior_digest(const DiagonalGaussian& q) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::vector<double>& v) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    mix(q.mean);
    mix(q.precision);
    return h;
}

}  // namespace airbfl
