#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "airbfl/rng.hpp"

namespace airbfl {

struct LabeledDataset {
    std::vector<double> inputs;  // n x p, row-major
    std::vector<int> labels;     // n entries in [0, num_classes)
    int n = 0;
    int p = 0;
    int num_classes = 0;

    std::span<const double> row(int i) const {
        return {inputs.data() + static_cast<std::size_t>(i) * p, static_cast<std::size_t>(p)};
    }
};

struct PartitionSpec {
    int devices = 40;
    int labels_per_device = 1;
    double poisson_mean = 10.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& raw,
                                         const std::string& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK)  // +32: auto-detect gzip/zlib header
        throw std::runtime_error("zlib init failed for " + path);
    std::vector<unsigned char> out;
    out.reserve(raw.size() * 4);
    zs.next_in = const_cast<unsigned char*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    unsigned char buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw std::runtime_error("gzip decompression failed for " + path);
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

inline std::vector<unsigned char> read_maybe_gzipped(const std::string& path) {
    auto raw = read_file_bytes(path);
    if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) return gunzip(raw, path);
    return raw;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
    if (off + 4 > b.size())
        throw std::runtime_error("IDX parse error in " + path + ": truncated at byte " +
                                 std::to_string(off));
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

/// Parses an IDX3 unsigned-byte image file (big-endian header, magic
/// 0x00000803), scaling pixels to [0,1]. Accepts gzip-compressed input.
inline std::vector<double> parse_idx_images(const std::string& path, int& n, int& rows, int& cols) {
    const auto bytes = detail::read_maybe_gzipped(path);
    const std::uint32_t magic = detail::read_be32(bytes, 0, path);
    if (magic != 0x00000803u)
        throw std::runtime_error("IDX parse error in " + path + ": bad image magic at byte 0");
    n = static_cast<int>(detail::read_be32(bytes, 4, path));
    rows = static_cast<int>(detail::read_be32(bytes, 8, path));
    cols = static_cast<int>(detail::read_be32(bytes, 12, path));
    const std::size_t need = 16 + std::size_t(n) * rows * cols;
    if (bytes.size() < need)
        throw std::runtime_error("IDX parse error in " + path + ": truncated at byte " +
                                 std::to_string(bytes.size()));
    std::vector<double> pixels(std::size_t(n) * rows * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = bytes[16 + i] / 255.0;
    return pixels;
}

/// Parses an IDX1 unsigned-byte label file (magic 0x00000801).
inline std::vector<int> parse_idx_labels(const std::string& path) {
    const auto bytes = detail::read_maybe_gzipped(path);
    const std::uint32_t magic = detail::read_be32(bytes, 0, path);
    if (magic != 0x00000801u)
        throw std::runtime_error("IDX parse error in " + path + ": bad label magic at byte 0");
    const int n = static_cast<int>(detail::read_be32(bytes, 4, path));
    if (bytes.size() < 8 + std::size_t(n))
        throw std::runtime_error("IDX parse error in " + path + ": truncated at byte " +
                                 std::to_string(bytes.size()));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = bytes[8 + i];
    return labels;
}

/// Loads an image/label IDX pair into a dataset. With downsample set, images
/// are 2x average-pooled (28x28 -> 14x14); dimensions must be even for that.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               bool downsample = true) {
    int n = 0, rows = 0, cols = 0;
    auto pixels = parse_idx_images(images_path, n, rows, cols);
    auto labels = parse_idx_labels(labels_path);
    if (static_cast<int>(labels.size()) != n)
        throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                                 std::to_string(labels.size()));

    LabeledDataset ds;
    ds.n = n;
    ds.labels = std::move(labels);
    ds.num_classes = 0;
    for (int l : ds.labels) ds.num_classes = std::max(ds.num_classes, l + 1);

    if (downsample) {
        if (rows % 2 != 0 || cols % 2 != 0)
            throw std::runtime_error("load_idx: cannot 2x downsample odd image dimensions");
        const int r2 = rows / 2, c2 = cols / 2;
        ds.p = r2 * c2;
        ds.inputs.resize(std::size_t(n) * ds.p);
        for (int i = 0; i < n; ++i) {
            const double* img = &pixels[std::size_t(i) * rows * cols];
            double* out = &ds.inputs[std::size_t(i) * ds.p];
            for (int r = 0; r < r2; ++r)
                for (int c = 0; c < c2; ++c)
                    out[r * c2 + c] = 0.25 * (img[(2 * r) * cols + 2 * c] +
                                              img[(2 * r) * cols + 2 * c + 1] +
                                              img[(2 * r + 1) * cols + 2 * c] +
                                              img[(2 * r + 1) * cols + 2 * c + 1]);
        }
    } else {
        ds.p = rows * cols;
        ds.inputs = std::move(pixels);
    }
    return ds;
}

/// Class-conditional Gaussian blobs with balanced labels. Class means are
/// orthogonal axis vectors scaled so that distinct class means sit
/// `class_separation` apart (cycling through axes with growing magnitude
/// when classes outnumber dimensions); per-sample noise is unit isotropic.
inline LabeledDataset synth_dataset(int num_classes, int n, int p, double class_separation,
                                    Rng& rng) {
    if (num_classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
    if (p < 1) throw std::invalid_argument("synth_dataset: need at least 1 dimension");
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(p, 0.0));
    const double scale = class_separation / std::sqrt(2.0);
    for (int c = 0; c < num_classes; ++c)
        means[c][c % p] = scale * (1.0 + c / p);

    LabeledDataset ds;
    ds.n = n;
    ds.p = p;
    ds.num_classes = num_classes;
    ds.inputs.resize(std::size_t(n) * p);
    ds.labels.resize(n);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const int c = i % num_classes;  // balanced
        ds.labels[i] = c;
        double* row = &ds.inputs[std::size_t(i) * p];
        for (int j = 0; j < p; ++j) row[j] = means[c][j] + noise(rng);
    }
    return ds;
}

/// Scarce/heterogeneous federated split: each device draws a label set of
/// size labels_per_device and a Poisson-sized shard from those labels,
/// without replacement across the whole partition. Zero Poisson draws are
/// resampled; a label assignment whose pool cannot cover the draw is
/// redrawn. Returns the shards and the dataset-size weights pi_k.
inline std::pair<std::vector<LabeledDataset>, std::vector<double>> partition(
    const LabeledDataset& dataset, const PartitionSpec& spec) {
    if (spec.devices < 1) throw std::invalid_argument("partition: need at least one device");
    if (spec.labels_per_device < 1 || spec.labels_per_device > dataset.num_classes)
        throw std::invalid_argument("partition: labels_per_device out of range");

    Rng rng = make_stream(spec.seed, 0x9a27u);
    std::vector<std::vector<int>> pools(dataset.num_classes);
    for (int i = 0; i < dataset.n; ++i) pools[dataset.labels[i]].push_back(i);
    for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

    std::poisson_distribution<int> size_dist(spec.poisson_mean);
    std::vector<std::vector<int>> shard_indices(spec.devices);
    std::vector<int> all_labels(dataset.num_classes);
    std::iota(all_labels.begin(), all_labels.end(), 0);

    for (int k = 0; k < spec.devices; ++k) {
        int n_k = 0;
        while (n_k == 0) n_k = size_dist(rng);

        std::vector<int> chosen;
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000)
                throw std::runtime_error("partition: no label assignment can cover device " +
                                         std::to_string(k));
            chosen = all_labels;
            std::shuffle(chosen.begin(), chosen.end(), rng);
            chosen.resize(spec.labels_per_device);
            int available = 0;
            for (int l : chosen) available += static_cast<int>(pools[l].size());
            if (available >= n_k) break;
        }

        // Draw without replacement from the union of the chosen labels' pools.
        std::vector<int> pool_union;
        for (int l : chosen)
            pool_union.insert(pool_union.end(), pools[l].begin(), pools[l].end());
        std::shuffle(pool_union.begin(), pool_union.end(), rng);
        pool_union.resize(n_k);
        shard_indices[k] = pool_union;
        for (int idx : pool_union)
            for (int l : chosen) {
                auto& pool = pools[l];
                auto it = std::find(pool.begin(), pool.end(), idx);
                if (it != pool.end()) {
                    pool.erase(it);
                    break;
                }
            }
    }

    std::vector<LabeledDataset> shards(spec.devices);
    double total = 0.0;
    for (int k = 0; k < spec.devices; ++k) total += static_cast<double>(shard_indices[k].size());
    std::vector<double> pis(spec.devices);
    for (int k = 0; k < spec.devices; ++k) {
        auto& shard = shards[k];
        shard.p = dataset.p;
        shard.num_classes = dataset.num_classes;
        shard.n = static_cast<int>(shard_indices[k].size());
        shard.inputs.reserve(std::size_t(shard.n) * dataset.p);
        shard.labels.reserve(shard.n);
        for (int idx : shard_indices[k]) {
            auto row = dataset.row(idx);
            shard.inputs.insert(shard.inputs.end(), row.begin(), row.end());
            shard.labels.push_back(dataset.labels[idx]);
        }
        pis[k] = shard.n / total;
    }
    return {std::move(shards), std::move(pis)};
}

}  // namespace airbfl
