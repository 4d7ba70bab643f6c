#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "airbfl/bayes.hpp"
#include "airbfl/round_log.hpp"

namespace airbfl {

struct Prediction {
    double confidence = 0.0;  // largest softmax entry
    int predicted = 0;
    int actual = 0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<Prediction> predictions;
};

inline Prediction prediction_from_probs(std::span<const double> probs, int actual) {
    Prediction pred;
    pred.actual = actual;
    for (std::size_t c = 0; c < probs.size(); ++c)
        if (probs[c] > probs[pred.predicted]) pred.predicted = static_cast<int>(c);
    pred.confidence = probs[pred.predicted];
    return pred;
}

inline double finalize_accuracy(EvalResult& result) {
    int correct = 0;
    for (const auto& p : result.predictions) correct += p.predicted == p.actual;
    result.accuracy = static_cast<double>(correct) / result.predictions.size();
    return result.accuracy;
}

/// MC-predictive evaluation of a Bayesian classifier on a test set.
inline EvalResult evaluate(const BayesianClassifier& model, const LabeledDataset& test,
                           int mc_samples, Rng& rng) {
    if (test.n == 0) throw std::invalid_argument("evaluate: empty test set");
    EvalResult result;
    result.predictions.reserve(test.n);
    for (int i = 0; i < test.n; ++i) {
        const auto probs = predict_mc(model, test.row(i), mc_samples, rng);
        result.predictions.push_back(prediction_from_probs(probs, test.labels[i]));
    }
    finalize_accuracy(result);
    return result;
}

/// Deterministic-model evaluation (baselines): single softmax forward pass.
inline EvalResult evaluate_deterministic(const MlpArchitecture& arch,
                                         std::span<const double> weights,
                                         const LabeledDataset& test) {
    if (test.n == 0) throw std::invalid_argument("evaluate: empty test set");
    EvalResult result;
    result.predictions.reserve(test.n);
    for (int i = 0; i < test.n; ++i) {
        const auto probs = forward_probs(arch, weights, test.row(i));
        result.predictions.push_back(prediction_from_probs(probs, test.labels[i]));
    }
    finalize_accuracy(result);
    return result;
}

/// Ten fixed confidence bins [0,0.1), ..., [0.9,1.0]; confidence exactly 1.0
/// lands in the top bin.
struct ReliabilityBins {
    std::array<int, 10> count{};
    std::array<double, 10> mean_confidence{};
    std::array<double, 10> accuracy{};

    static int bin_of(double confidence) {
        const int j = static_cast<int>(confidence * 10.0);
        return j > 9 ? 9 : (j < 0 ? 0 : j);
    }
};

inline ReliabilityBins reliability_bins(const std::vector<Prediction>& predictions) {
    ReliabilityBins bins;
    std::array<double, 10> conf_sum{};
    std::array<int, 10> correct{};
    for (const auto& p : predictions) {
        if (p.confidence < 0.0 || p.confidence > 1.0)
            throw std::invalid_argument("reliability_bins: confidence outside [0,1]");
        const int j = ReliabilityBins::bin_of(p.confidence);
        bins.count[j] += 1;
        conf_sum[j] += p.confidence;
        correct[j] += p.predicted == p.actual;
    }
    for (int j = 0; j < 10; ++j) {
        if (bins.count[j] == 0) continue;
        bins.mean_confidence[j] = conf_sum[j] / bins.count[j];
        bins.accuracy[j] = static_cast<double>(correct[j]) / bins.count[j];
    }
    return bins;
}

/// Expected calibration error: bin-weighted |acc - conf|; empty bins
/// contribute nothing.
inline double ece(const std::vector<Prediction>& predictions) {
    if (predictions.empty()) return 0.0;
    const auto bins = reliability_bins(predictions);
    const double n = static_cast<double>(predictions.size());
    double acc = 0.0;
    for (int j = 0; j < 10; ++j)
        if (bins.count[j] > 0)
            acc += bins.count[j] / n * std::abs(bins.accuracy[j] - bins.mean_confidence[j]);
    return acc;
}

namespace detail {

// Shortest decimal form that round-trips a double (17 significant digits).
inline std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline constexpr const char* kRoundCsvHeader =
    "round,phase1_loss,phase2_loss,xi_rho_sq,xi_nu_sq,noise_scale_rho,noise_scale_nu,"
    "test_acc,ece,wall_ms";

/// One CSV row per round, fields ordered per the documented schema, floats
/// serialized so that re-reading reproduces them exactly.
inline void write_logs(const std::vector<RoundLog>& logs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_logs: cannot open " + path);
    out << kRoundCsvHeader << "\n";
    for (const auto& log : logs) {
        out << log.round << ',' << detail::format_float(log.phase1_loss) << ','
            << detail::format_float(log.phase2_loss) << ','
            << detail::format_float(log.xi_rho_norm_sq) << ','
            << detail::format_float(log.xi_nu_norm_sq) << ','
            << detail::format_float(log.noise_scale_rho) << ','
            << detail::format_float(log.noise_scale_nu) << ','
            << detail::format_float(log.test_accuracy) << ',' << detail::format_float(log.ece)
            << ',' << detail::format_float(log.wall_ms) << "\n";
    }
    if (!out) throw std::runtime_error("write_logs: write failed for " + path);
}

}  // namespace airbfl
