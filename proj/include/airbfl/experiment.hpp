#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "airbfl/orchestrator.hpp"

namespace airbfl {

struct DatasetSource {
    enum class Kind { Synth, MnistDir } kind = Kind::Synth;
    std::string mnist_dir;
    bool downsample = true;  // 2x average-pool images on load

    // Synthetic-source parameters.
    int synth_classes = 10;
    int synth_input_dim = 196;  // 14x14
    int synth_train_n = 4000;
    int synth_test_n = 2000;
    double synth_separation = 3.0;
};

/// One experiment grid: a method, a base configuration, a dataset source,
/// optional sweep axes, and a repetition count. Every grid point runs with
/// an independently derived seed and writes to its own subdirectory.
struct ExperimentSpec {
    Method method = Method::BayesAircomp;
    FLConfig config;
    DatasetSource dataset;
    int labels_per_device = 1;
    double poisson_mean = 10.0;
    std::vector<double> power_dbm_sweep;   // empty: single point at config power
    std::vector<int> labels_sweep;         // empty: single point at labels_per_device
    std::vector<double> poisson_sweep;     // empty: single point at poisson_mean
    int repetitions = 1;
    std::string out_dir = "out";
};

inline Method parse_method(const std::string& name) {
    if (name == "bayes-aircomp") return Method::BayesAircomp;
    if (name == "fedavg-aircomp") return Method::FedavgAircomp;
    if (name == "fedprox-aircomp") return Method::FedproxAircomp;
    if (name == "bayes-ideal") return Method::BayesIdeal;
    throw std::invalid_argument("method: unknown value '" + name + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string strip_quotes(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

/// Numeric literal with an optional dBm/dB unit suffix, converted to linear
/// units ("23 dBm" -> watts, "10 dB" -> linear ratio).
inline double parse_power_value(const std::string& raw, const std::string& key) {
    const std::string s = trim(strip_quotes(trim(raw)));
    std::size_t pos = 0;
    double value = 0.0;
    try {
        value = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": not a number: '" + s + "'");
    }
    std::string suffix = trim(s.substr(pos));
    std::transform(suffix.begin(), suffix.end(), suffix.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (suffix.empty()) return value;
    if (suffix == "dbm") return dbm_to_watts(value);
    if (suffix == "db") return db_to_linear(value);
    if (suffix == "w" || suffix == "watts") return value;
    throw std::invalid_argument(key + ": unknown unit suffix '" + suffix + "'");
}

inline double parse_double(const std::string& raw, const std::string& key) {
    const std::string s = trim(strip_quotes(trim(raw)));
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(key + ": not a number: '" + s + "'");
}

inline long parse_int(const std::string& raw, const std::string& key) {
    const std::string s = trim(strip_quotes(trim(raw)));
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (trim(s.substr(pos)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(key + ": not an integer: '" + s + "'");
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
    const std::string s = trim(strip_quotes(trim(raw)));
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument(key + ": not a boolean: '" + s + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& raw, const std::string& key, Parse parse) {
    std::string s = trim(strip_quotes(trim(raw)));
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(static_cast<T>(parse(item, key)));
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
}

}  // namespace detail

inline void apply_dataset_value(DatasetSource& ds, const std::string& value) {
    const std::string v = detail::strip_quotes(detail::trim(value));
    if (v == "synth") {
        ds.kind = DatasetSource::Kind::Synth;
    } else if (v.rfind("mnist:", 0) == 0) {
        ds.kind = DatasetSource::Kind::MnistDir;
        ds.mnist_dir = v.substr(6);
        if (ds.mnist_dir.empty())
            throw std::invalid_argument("dataset: mnist source needs a directory (mnist:<dir>)");
    } else {
        throw std::invalid_argument("dataset: expected 'synth' or 'mnist:<dir>', got '" + v + "'");
    }
}

/// Applies one key/value pair to the spec. Shared by the config-file parser
/// and the command-line override path; throws with the offending key in the
/// message on any malformed value.
inline void apply_config_entry(ExperimentSpec& spec, const std::string& key,
                               const std::string& value) {
    using namespace detail;
    FLConfig& c = spec.config;
    if (key == "method") spec.method = parse_method(strip_quotes(trim(value)));
    else if (key == "devices") c.devices = static_cast<int>(parse_int(value, key));
    else if (key == "subchannels") c.subchannels = static_cast<int>(parse_int(value, key));
    else if (key == "symbol_power") c.symbol_power = parse_power_value(value, key);
    else if (key == "noise_power") c.noise_power = parse_power_value(value, key);
    else if (key == "power_scaling") c.power_scaling = parse_power_value(value, key);
    else if (key == "learning_rate") c.learning_rate = parse_double(value, key);
    else if (key == "kl_weight") c.kl_weight = parse_double(value, key);
    else if (key == "local_epochs") c.local_epochs = static_cast<int>(parse_int(value, key));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "mc_samples") c.mc_samples = static_cast<int>(parse_int(value, key));
    else if (key == "rounds") c.rounds = static_cast<int>(parse_int(value, key));
    else if (key == "pathloss_exponent") c.pathloss_exponent = parse_double(value, key);
    else if (key == "coverage_radius") c.coverage_radius = parse_double(value, key);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "hidden_units") c.hidden_units = static_cast<int>(parse_int(value, key));
    else if (key == "init_sigma") c.init_sigma = parse_double(value, key);
    else if (key == "fedprox_mu") c.fedprox_mu = parse_double(value, key);
    else if (key == "labels_per_device")
        spec.labels_per_device = static_cast<int>(parse_int(value, key));
    else if (key == "poisson_mean") spec.poisson_mean = parse_double(value, key);
    else if (key == "repetitions") spec.repetitions = static_cast<int>(parse_int(value, key));
    else if (key == "out_dir") spec.out_dir = strip_quotes(trim(value));
    else if (key == "dataset") apply_dataset_value(spec.dataset, value);
    else if (key == "downsample") spec.dataset.downsample = parse_bool(value, key);
    else if (key == "synth_classes")
        spec.dataset.synth_classes = static_cast<int>(parse_int(value, key));
    else if (key == "synth_input_dim")
        spec.dataset.synth_input_dim = static_cast<int>(parse_int(value, key));
    else if (key == "synth_train_n")
        spec.dataset.synth_train_n = static_cast<int>(parse_int(value, key));
    else if (key == "synth_test_n")
        spec.dataset.synth_test_n = static_cast<int>(parse_int(value, key));
    else if (key == "synth_separation") spec.dataset.synth_separation = parse_double(value, key);
    else if (key == "power_dbm_sweep")
        spec.power_dbm_sweep = parse_list<double>(value, key, parse_double);
    else if (key == "labels_sweep")
        spec.labels_sweep = parse_list<int>(value, key, parse_int);
    else if (key == "poisson_sweep")
        spec.poisson_sweep = parse_list<double>(value, key, parse_double);
    else
        throw std::invalid_argument("unknown config key '" + key + "'");
}

/// TOML-style key = value file: comments with '#', blank lines ignored.
inline void load_config_file(ExperimentSpec& spec, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key = value");
        try {
            apply_config_entry(spec, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline LabeledDataset load_mnist_split(const std::string& dir, bool train, bool downsample) {
    namespace fs = std::filesystem;
    const std::string img_base = train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const std::string lbl_base = train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    auto resolve = [&dir](const std::string& base) -> std::string {
        for (const char* suffix : {"", ".gz"}) {
            const fs::path p = fs::path(dir) / (base + suffix);
            if (fs::exists(p)) return p.string();
        }
        throw std::invalid_argument("dataset: missing " + base + "[.gz] under " + dir);
    };
    return load_idx(resolve(img_base), resolve(lbl_base), downsample);
}

struct DatasetPair {
    LabeledDataset train;
    LabeledDataset test;
};

inline DatasetPair load_datasets(const DatasetSource& ds, std::uint64_t seed) {
    DatasetPair pair;
    if (ds.kind == DatasetSource::Kind::MnistDir) {
        pair.train = load_mnist_split(ds.mnist_dir, true, ds.downsample);
        pair.test = load_mnist_split(ds.mnist_dir, false, ds.downsample);
    } else {
        Rng rng = make_stream(seed, seed_tag::kSynth);
        pair.train = synth_dataset(ds.synth_classes, ds.synth_train_n, ds.synth_input_dim,
                                   ds.synth_separation, rng);
        pair.test = synth_dataset(ds.synth_classes, ds.synth_test_n, ds.synth_input_dim,
                                  ds.synth_separation, rng);
    }
    return pair;
}

inline nlohmann::ordered_json config_to_json(const ExperimentSpec& spec, const FLConfig& c,
                                             int labels_per_device, double poisson_mean) {
    nlohmann::ordered_json j;
    j["method"] = method_name(spec.method);
    j["devices"] = c.devices;
    j["subchannels"] = c.subchannels;
    j["symbol_power_watts"] = c.symbol_power;
    j["symbol_power_dbm"] = watts_to_dbm(c.symbol_power);
    j["noise_power_watts"] = c.noise_power;
    if (c.noise_power > 0.0) j["noise_power_dbm"] = watts_to_dbm(c.noise_power);
    j["power_scaling"] = c.power_scaling;
    j["power_scaling_db"] = linear_to_db(c.power_scaling);
    j["learning_rate"] = c.learning_rate;
    j["kl_weight"] = c.kl_weight;
    j["local_epochs"] = c.local_epochs;
    j["batch_size"] = c.batch_size;
    j["mc_samples"] = c.mc_samples;
    j["rounds"] = c.rounds;
    j["pathloss_exponent"] = c.pathloss_exponent;
    j["coverage_radius"] = c.coverage_radius;
    j["seed"] = c.seed;
    j["hidden_units"] = c.hidden_units;
    j["init_sigma"] = c.init_sigma;
    j["fedprox_mu"] = c.fedprox_mu;
    j["labels_per_device"] = labels_per_device;
    j["poisson_mean"] = poisson_mean;
    if (spec.dataset.kind == DatasetSource::Kind::MnistDir) {
        j["dataset"] = "mnist:" + spec.dataset.mnist_dir;
        j["downsample"] = spec.dataset.downsample;
    } else {
        j["dataset"] = "synth";
        j["synth_classes"] = spec.dataset.synth_classes;
        j["synth_input_dim"] = spec.dataset.synth_input_dim;
        j["synth_train_n"] = spec.dataset.synth_train_n;
        j["synth_test_n"] = spec.dataset.synth_test_n;
        j["synth_separation"] = spec.dataset.synth_separation;
    }
    return j;
}

inline nlohmann::ordered_json reliability_to_json(const ReliabilityBins& bins) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int b = 0; b < 10; ++b) {
        nlohmann::ordered_json row;
        row["bin_low"] = b / 10.0;
        row["bin_high"] = (b + 1) / 10.0;
        row["count"] = bins.count[b];
        row["confidence"] = bins.mean_confidence[b];
        row["accuracy"] = bins.accuracy[b];
        rows.push_back(row);
    }
    return rows;
}

struct RunArtifacts {
    TrainingRun run;
    std::string dir;
    double final_accuracy = 0.0;
    double final_ece = 0.0;
};

/// Runs one grid point and writes rounds.csv plus summary.json into its
/// directory. The summary echoes every effective parameter.
inline RunArtifacts run_grid_point(const ExperimentSpec& spec, const FLConfig& cfg,
                                   int labels_per_device, double poisson_mean,
                                   const std::string& dir, const WallClock& clock = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    const DatasetPair data = load_datasets(spec.dataset, cfg.seed);
    RunArtifacts art;
    art.dir = dir;
    art.run = run_training(spec.method, cfg, data.train, data.test, labels_per_device,
                           poisson_mean, clock);
    const auto& logs = art.run.logs;
    if (!logs.empty()) {
        art.final_accuracy = logs.back().test_accuracy;
        art.final_ece = logs.back().ece;
    }
    write_logs(logs, (fs::path(dir) / "rounds.csv").string());

    nlohmann::ordered_json summary;
    summary["config"] = config_to_json(spec, cfg, labels_per_device, poisson_mean);
    summary["rounds_completed"] = static_cast<int>(logs.size());
    summary["final_accuracy"] = art.final_accuracy;
    summary["final_ece"] = art.final_ece;
    summary["mean_xi_rho_sq"] = art.run.diagnostics.mean_xi_rho_sq();
    summary["mean_xi_nu_sq"] = art.run.diagnostics.mean_xi_nu_sq();
    summary["mean_noise_scale_rho"] = art.run.diagnostics.mean_noise_scale_rho();
    summary["mean_noise_scale_nu"] = art.run.diagnostics.mean_noise_scale_nu();
    summary["smoothness_estimate_rho"] = art.run.diagnostics.lambda_rho_hat;
    summary["smoothness_estimate_nu"] = art.run.diagnostics.lambda_nu_hat;
    summary["gradient_bound_estimate"] = art.run.diagnostics.bound_rhs();
    summary["weight_count"] = art.run.weight_count;
    summary["symbols_per_phase"] = cfg.symbols_per_phase(art.run.weight_count);
    summary["power_audit_symbols"] = art.run.power_audit.symbols;
    summary["power_audit_violations"] = art.run.power_audit.violations;
    if (!art.run.final_eval.predictions.empty())
        summary["reliability"] = reliability_to_json(reliability_bins(art.run.final_eval.predictions));

    std::ofstream out(fs::path(dir) / "summary.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write summary under " + dir);
    out << summary.dump(2) << "\n";
    return art;
}

/// Expands the sweep axes (falling back to the base point when an axis is
/// empty), derives one seed per point, runs every point, and writes a grid
/// summary at the output root. Returns the grid summary.
inline nlohmann::ordered_json run_experiment(const ExperimentSpec& spec,
                                             const WallClock& clock = {}) {
    namespace fs = std::filesystem;
    spec.config.validate();
    if (spec.repetitions < 1) throw std::invalid_argument("repetitions: must be >= 1");

    const std::vector<double> powers_dbm = spec.power_dbm_sweep.empty()
                                               ? std::vector<double>{watts_to_dbm(
                                                     spec.config.symbol_power)}
                                               : spec.power_dbm_sweep;
    const std::vector<int> labels =
        spec.labels_sweep.empty() ? std::vector<int>{spec.labels_per_device} : spec.labels_sweep;
    const std::vector<double> means = spec.poisson_sweep.empty()
                                          ? std::vector<double>{spec.poisson_mean}
                                          : spec.poisson_sweep;

    fs::create_directories(spec.out_dir);
    nlohmann::ordered_json grid;
    grid["method"] = method_name(spec.method);
    grid["base_seed"] = spec.config.seed;
    grid["points"] = nlohmann::ordered_json::array();

    for (std::size_t pi = 0; pi < powers_dbm.size(); ++pi)
        for (std::size_t li = 0; li < labels.size(); ++li)
            for (std::size_t mi = 0; mi < means.size(); ++mi)
                for (int rep = 0; rep < spec.repetitions; ++rep) {
                    FLConfig cfg = spec.config;
                    cfg.symbol_power = dbm_to_watts(powers_dbm[pi]);
                    cfg.seed = mix_seed(spec.config.seed, 0xa11ce5u, pi, li, mi,
                                        static_cast<std::uint64_t>(rep));
                    std::ostringstream name;
                    name << "p" << powers_dbm[pi] << "dBm_L" << labels[li] << "_pm" << means[mi]
                         << "_rep" << rep;
                    const std::string dir = (fs::path(spec.out_dir) / name.str()).string();
                    const auto art =
                        run_grid_point(spec, cfg, labels[li], means[mi], dir, clock);

                    nlohmann::ordered_json point;
                    point["power_dbm"] = powers_dbm[pi];
                    point["labels_per_device"] = labels[li];
                    point["poisson_mean"] = means[mi];
                    point["repetition"] = rep;
                    point["seed"] = cfg.seed;
                    point["dir"] = name.str();
                    point["final_accuracy"] = art.final_accuracy;
                    point["final_ece"] = art.final_ece;
                    point["mean_xi_total"] = art.run.diagnostics.mean_xi_rho_sq() +
                                             art.run.diagnostics.mean_xi_nu_sq();
                    grid["points"].push_back(point);
                }

    std::ofstream out(fs::path(spec.out_dir) / "grid_summary.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write grid summary under " + spec.out_dir);
    out << grid.dump(2) << "\n";
    return grid;
}

}  // namespace airbfl
